#include "semfuse/observation_cache.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "binary_io.hpp"

namespace semfuse {

namespace {
constexpr char kMagic[4] = {'S', 'F', 'C', '1'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

ObservationBuffer ObservationBuffer::from_records(std::span<const ObservationRecord> records,
                                                  int class_count) {
  ObservationBuffer buf;
  buf.class_count = class_count;
  for (const auto& r : records) {
    if (r.logits.size() != static_cast<std::size_t>(class_count)) {
      throw std::invalid_argument("observation record has wrong logit count");
    }
    buf.logits.insert(buf.logits.end(), r.logits.begin(), r.logits.end());
    buf.distance.push_back(r.distance);
    buf.incidence_cos.push_back(r.incidence_cos);
  }
  return buf;
}

void ObservationCache::add_voxel(std::uint64_t voxel_id, int gt_label,
                                 std::span<const ObservationRecord> records) {
  const auto buf = ObservationBuffer::from_records(records, class_count_);
  std::vector<std::uint32_t> frames;
  for (const auto& r : records) frames.push_back(r.frame_index);
  add_voxel(voxel_id, gt_label, buf.logits, buf.distance, buf.incidence_cos, frames);
}

void ObservationCache::add_voxel(std::uint64_t voxel_id, int gt_label,
                                 std::span<const float> logits,
                                 std::span<const float> distance,
                                 std::span<const float> incidence_cos,
                                 std::span<const std::uint32_t> frames) {
  const std::size_t n = distance.size();
  if (n == 0) throw std::invalid_argument("cache entry needs at least one observation");
  if (gt_label < 0 || gt_label >= class_count_) {
    throw std::invalid_argument("cache entry has an out-of-range ground-truth label");
  }
  if (logits.size() != n * static_cast<std::size_t>(class_count_) ||
      incidence_cos.size() != n || frames.size() != n) {
    throw std::invalid_argument("cache entry buffers disagree in length");
  }
  gt_.push_back(gt_label);
  voxel_ids_.push_back(voxel_id);
  logits_.insert(logits_.end(), logits.begin(), logits.end());
  distance_.insert(distance_.end(), distance.begin(), distance.end());
  incidence_.insert(incidence_.end(), incidence_cos.begin(), incidence_cos.end());
  frames_.insert(frames_.end(), frames.begin(), frames.end());
  offsets_.push_back(distance_.size());
}

ObservationSpan ObservationCache::voxel(std::size_t i) const {
  const std::size_t b = offsets_[i];
  const std::size_t n = offsets_[i + 1] - b;
  const auto k = static_cast<std::size_t>(class_count_);
  return {class_count_, std::span<const float>(logits_).subspan(b * k, n * k),
          std::span<const float>(distance_).subspan(b, n),
          std::span<const float>(incidence_).subspan(b, n)};
}

std::span<const std::uint32_t> ObservationCache::frames(std::size_t i) const {
  return std::span<const std::uint32_t>(frames_).subspan(offsets_[i],
                                                         offsets_[i + 1] - offsets_[i]);
}

std::vector<ObservationRecord> ObservationCache::records(std::size_t i) const {
  const auto span = voxel(i);
  const auto fr = frames(i);
  std::vector<ObservationRecord> out(span.size());
  for (std::size_t t = 0; t < span.size(); ++t) {
    const auto l = span.logits_of(t);
    out[t].logits.assign(l.begin(), l.end());
    out[t].distance = span.distance[t];
    out[t].incidence_cos = span.incidence_cos[t];
    out[t].frame_index = fr[t];
  }
  return out;
}

int ObservationCache::distinct_labels() const {
  return static_cast<int>(std::set<std::int32_t>(gt_.begin(), gt_.end()).size());
}

ObservationCache ObservationCache::subsample(std::size_t max_voxels, std::uint64_t seed) const {
  std::vector<std::size_t> keep(voxel_count());
  std::iota(keep.begin(), keep.end(), 0);
  if (keep.size() > max_voxels) {
    std::mt19937_64 rng(seed);
    std::shuffle(keep.begin(), keep.end(), rng);
    keep.resize(max_voxels);
    std::sort(keep.begin(), keep.end());
  }
  ObservationCache out(class_count_);
  out.provenance_ = provenance_;
  out.subsample_seed_ = seed;
  for (const std::size_t i : keep) {
    const auto s = voxel(i);
    out.add_voxel(voxel_ids_[i], gt_[i], s.logits, s.distance, s.incidence_cos, frames(i));
  }
  return out;
}

void ObservationCache::append(const ObservationCache& other) {
  if (empty() && class_count_ == 0) class_count_ = other.class_count_;
  if (other.class_count_ != class_count_) {
    throw std::invalid_argument("cannot merge caches with different class counts");
  }
  for (std::size_t i = 0; i < other.voxel_count(); ++i) {
    const auto s = other.voxel(i);
    add_voxel(other.voxel_ids_[i], other.gt_[i], s.logits, s.distance, s.incidence_cos,
              other.frames(i));
  }
  provenance_.insert(provenance_.end(), other.provenance_.begin(), other.provenance_.end());
}

void ObservationCache::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SceneIoError(path, "cannot open for writing");
  detail::BinaryWriter w(out);
  out.write(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(class_count_));
  w.put<std::uint64_t>(voxel_count());
  w.put<std::uint64_t>(observation_count());
  w.put<std::uint64_t>(subsample_seed_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(provenance_.size()));
  for (const auto& p : provenance_) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.size()));
    out.write(p.data(), static_cast<std::streamsize>(p.size()));
  }
  const auto k = static_cast<std::size_t>(class_count_);
  for (std::size_t i = 0; i < voxel_count(); ++i) {
    w.put<std::uint64_t>(voxel_ids_[i]);
    w.put<std::int32_t>(gt_[i]);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(offsets_[i + 1] - offsets_[i]));
    for (std::size_t j = offsets_[i]; j < offsets_[i + 1]; ++j) {
      w.put<std::uint32_t>(frames_[j]);
      w.put<float>(distance_[j]);
      w.put<float>(incidence_[j]);
      w.put_span<float>(std::span<const float>(logits_).subspan(j * k, k));
    }
  }
  if (!out) throw SceneIoError(path, "write failed");
}

ObservationCache ObservationCache::load(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw SceneIoError(path, "not an observation cache (bad magic)");
  }
  detail::BinaryReader r(std::span<const char>(bytes).subspan(4), path);
  if (r.get<std::uint32_t>() != kVersion) throw SceneIoError(path, "unsupported cache version");
  ObservationCache cache(static_cast<int>(r.get<std::uint32_t>()));
  const auto voxels = r.get<std::uint64_t>();
  const auto observations = r.get<std::uint64_t>();
  cache.subsample_seed_ = r.get<std::uint64_t>();
  const auto n_prov = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_prov; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string s(len, '\0');
    for (auto& c : s) c = r.get<char>();
    cache.provenance_.push_back(std::move(s));
  }
  const auto k = static_cast<std::size_t>(cache.class_count_);
  std::vector<float> logits, dist, inc;
  std::vector<std::uint32_t> frames;
  for (std::uint64_t v = 0; v < voxels; ++v) {
    const auto id = r.get<std::uint64_t>();
    const auto gt = r.get<std::int32_t>();
    const auto n = r.get<std::uint32_t>();
    logits.resize(static_cast<std::size_t>(n) * k);
    dist.resize(n);
    inc.resize(n);
    frames.resize(n);
    for (std::uint32_t j = 0; j < n; ++j) {
      frames[j] = r.get<std::uint32_t>();
      dist[j] = r.get<float>();
      inc[j] = r.get<float>();
      for (std::size_t c = 0; c < k; ++c) logits[j * k + c] = r.get<float>();
    }
    try {
      cache.add_voxel(id, gt, logits, dist, inc, frames);
    } catch (const std::invalid_argument& e) {
      throw SceneIoError(path, e.what());
    }
  }
  if (cache.observation_count() != observations || !r.done()) {
    throw SceneIoError(path, "cache header disagrees with payload");
  }
  return cache;
}

}  // namespace semfuse

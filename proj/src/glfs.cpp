#include "semfuse/glfs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace semfuse {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

double logit(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  return std::log(p / (1.0 - p));
}

int edge_bin(const std::vector<double>& edges, double x) {
  const int bins = static_cast<int>(edges.size()) - 1;
  // Index of the last edge <= x, clamped into [0, bins).
  const auto it = std::upper_bound(edges.begin(), edges.end(), x);
  const int b = static_cast<int>(it - edges.begin()) - 1;
  return std::clamp(b, 0, bins - 1);
}

}  // namespace

LookupBins LookupBins::defaults() {
  LookupBins b;
  for (int i = 0; i <= 8; ++i) b.distance_edges.push_back(5.0 * i / 8.0);
  for (int i = 0; i <= 4; ++i) b.incidence_edges.push_back(i / 4.0);
  return b;
}

int LookupBins::distance_bin(double distance) const { return edge_bin(distance_edges, distance); }

int LookupBins::incidence_bin(double incidence_cos) const {
  return edge_bin(incidence_edges, incidence_cos);
}

GlfsParams GlfsParams::make(int class_count, double gate, double epsilon, LookupBins bins,
                            bool scalar_tau) {
  GlfsParams p;
  p.class_count = class_count;
  p.scalar_tau = scalar_tau;
  p.log_tau.assign(scalar_tau ? 1 : static_cast<std::size_t>(class_count), 0.0);
  p.gate_logit = logit(gate);
  p.epsilon_logit = logit(epsilon);
  p.bins = std::move(bins);
  const std::size_t table = static_cast<std::size_t>(class_count) *
                            static_cast<std::size_t>(p.bins.distance_bins()) *
                            static_cast<std::size_t>(p.bins.incidence_bins());
  p.table_raw.assign(table, softplus_inverse(1.0));
  p.validate();
  return p;
}

double GlfsParams::tau(std::size_t k) const {
  return std::exp(scalar_tau ? log_tau[0] : log_tau[k]);
}

double GlfsParams::gate() const { return sigmoid(gate_logit); }

double GlfsParams::epsilon() const { return sigmoid(epsilon_logit); }

std::size_t GlfsParams::table_index(int cls, int distance_bin, int incidence_bin) const {
  return (static_cast<std::size_t>(cls) * static_cast<std::size_t>(bins.distance_bins()) +
          static_cast<std::size_t>(distance_bin)) *
             static_cast<std::size_t>(bins.incidence_bins()) +
         static_cast<std::size_t>(incidence_bin);
}

double GlfsParams::table_weight(std::size_t index) const { return softplus(table_raw[index]); }

std::size_t GlfsParams::parameter_count() const { return log_tau.size() + 2 + table_raw.size(); }

std::vector<double> GlfsParams::flatten() const {
  std::vector<double> out(log_tau);
  out.push_back(gate_logit);
  out.push_back(epsilon_logit);
  out.insert(out.end(), table_raw.begin(), table_raw.end());
  return out;
}

void GlfsParams::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw std::invalid_argument("GlfsParams::unflatten: wrong parameter count");
  }
  std::size_t i = 0;
  for (auto& v : log_tau) v = values[i++];
  gate_logit = values[i++];
  epsilon_logit = values[i++];
  for (auto& v : table_raw) v = values[i++];
}

void GlfsParams::validate() const {
  if (class_count < 2) throw std::invalid_argument("GLFS params: class_count must be >= 2");
  if (log_tau.size() != (scalar_tau ? 1u : static_cast<std::size_t>(class_count))) {
    throw std::invalid_argument("GLFS params: tau has the wrong length");
  }
  if (bins.distance_bins() < 1 || bins.incidence_bins() < 1) {
    throw std::invalid_argument("GLFS params: look-up table needs at least one bin per axis");
  }
  if (!std::is_sorted(bins.distance_edges.begin(), bins.distance_edges.end()) ||
      !std::is_sorted(bins.incidence_edges.begin(), bins.incidence_edges.end())) {
    throw std::invalid_argument("GLFS params: bin edges must be ascending");
  }
  const std::size_t table = static_cast<std::size_t>(class_count) *
                            static_cast<std::size_t>(bins.distance_bins()) *
                            static_cast<std::size_t>(bins.incidence_bins());
  if (table_raw.size() != table) {
    throw std::invalid_argument("GLFS params: look-up table has the wrong size");
  }
  for (const double v : log_tau) {
    if (!std::isfinite(v)) throw std::invalid_argument("GLFS params: non-finite tau");
  }
  for (const double v : table_raw) {
    if (!std::isfinite(v)) throw std::invalid_argument("GLFS params: non-finite table entry");
  }
  if (std::isnan(gate_logit) || std::isnan(epsilon_logit)) {
    throw std::invalid_argument("GLFS params: NaN gate");
  }
}

namespace {

// Forward intermediates of one voxel, reused by the backward pass.
struct VoxelWork {
  std::vector<double> s;    // T × K scaled likelihoods
  std::vector<double> ell;  // T × K smoothed log-likelihoods
  std::vector<double> z;    // T × K scaled logits
  std::vector<double> w;    // T weights
  std::vector<std::size_t> cell;  // T table indices
  std::vector<double> log_sum, lin_sum, pg, pa, p;
  double weight_sum = 0.0;
  double exponent = 0.0;
};

void forward(const ObservationSpan& obs, const GlfsParams& params, double alpha, VoxelWork& wk) {
  const auto k = static_cast<std::size_t>(params.class_count);
  const std::size_t t_count = obs.size();
  wk.s.resize(t_count * k);
  wk.ell.resize(t_count * k);
  wk.z.resize(t_count * k);
  wk.w.resize(t_count);
  wk.cell.resize(t_count);
  wk.log_sum.assign(k, 0.0);
  wk.lin_sum.assign(k, 0.0);
  wk.pg.resize(k);
  wk.pa.resize(k);
  wk.p.resize(k);
  wk.weight_sum = 0.0;

  const double log_denom = std::log1p(static_cast<double>(k) * alpha);
  for (std::size_t t = 0; t < t_count; ++t) {
    const auto logits = obs.logits_of(t);
    double* z = wk.z.data() + t * k;
    double* s = wk.s.data() + t * k;
    double* ell = wk.ell.data() + t * k;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      z[c] = static_cast<double>(logits[c]) / params.tau(c);
      m = std::max(m, z[c]);
    }
    double zsum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      s[c] = std::exp(z[c] - m);
      zsum += s[c];
    }
    for (std::size_t c = 0; c < k; ++c) s[c] /= zsum;
    const int pi = argmax(std::span<const double>(s, k));
    wk.cell[t] = params.table_index(pi, params.bins.distance_bin(obs.distance[t]),
                                    params.bins.incidence_bin(obs.incidence_cos[t]));
    const double w = params.table_weight(wk.cell[t]);
    wk.w[t] = w;
    wk.weight_sum += w;
    for (std::size_t c = 0; c < k; ++c) {
      ell[c] = std::log(s[c] + alpha) - log_denom;
      wk.log_sum[c] += w * ell[c];
      wk.lin_sum[c] += w * s[c];
    }
  }

  const double g = params.gate();
  const double eps = params.epsilon();
  wk.exponent = (1.0 - eps) / wk.weight_sum + eps;
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) m = std::max(m, wk.exponent * wk.log_sum[c]);
  double zg = 0.0, za = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    wk.pg[c] = std::exp(wk.exponent * wk.log_sum[c] - m);
    zg += wk.pg[c];
    za += wk.lin_sum[c];
  }
  for (std::size_t c = 0; c < k; ++c) {
    wk.pg[c] /= zg;
    wk.pa[c] = wk.lin_sum[c] / za;
    wk.p[c] = g * wk.pg[c] + (1.0 - g) * wk.pa[c];
  }
}

// Accumulates dL/dθ (flattened layout) given dL/dp for one voxel.
void backward(const ObservationSpan& obs, const GlfsParams& params, double alpha,
              const VoxelWork& wk, std::span<const double> dp, std::span<double> grad) {
  const auto k = static_cast<std::size_t>(params.class_count);
  const std::size_t t_count = obs.size();
  const std::size_t tau_count = params.log_tau.size();
  const std::size_t gate_at = tau_count;
  const std::size_t eps_at = tau_count + 1;
  const std::size_t table_at = tau_count + 2;

  const double g = params.gate();
  const double eps = params.epsilon();
  const double big_w = wk.weight_sum;

  double d_gate = 0.0;
  for (std::size_t c = 0; c < k; ++c) d_gate += dp[c] * (wk.pg[c] - wk.pa[c]);

  // Geometric branch: pg = softmax(exponent * log_sum).
  double mean = 0.0;
  for (std::size_t c = 0; c < k; ++c) mean += wk.pg[c] * g * dp[c];
  std::vector<double> d_log_sum(k);
  double d_exponent = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double d_arg = wk.pg[c] * (g * dp[c] - mean);
    d_exponent += d_arg * wk.log_sum[c];
    d_log_sum[c] = wk.exponent * d_arg;
  }
  const double d_eps = d_exponent * (1.0 - 1.0 / big_w);
  double d_weight_sum = d_exponent * (-(1.0 - eps) / (big_w * big_w));

  // Arithmetic branch: pa = lin_sum / W.
  std::vector<double> d_lin(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double d_pa = (1.0 - g) * dp[c];
    d_lin[c] = d_pa / big_w;
    d_weight_sum -= d_pa * wk.pa[c] / big_w;
  }

  std::vector<double> d_s(k);
  for (std::size_t t = 0; t < t_count; ++t) {
    const double* s = wk.s.data() + t * k;
    const double* ell = wk.ell.data() + t * k;
    const double* z = wk.z.data() + t * k;
    const double w = wk.w[t];
    double d_w = d_weight_sum;
    for (std::size_t c = 0; c < k; ++c) {
      d_w += d_log_sum[c] * ell[c] + d_lin[c] * s[c];
      d_s[c] = w * d_log_sum[c] / (s[c] + alpha) + w * d_lin[c];
    }
    double dot = 0.0;
    for (std::size_t c = 0; c < k; ++c) dot += s[c] * d_s[c];
    for (std::size_t c = 0; c < k; ++c) {
      const double d_z = s[c] * (d_s[c] - dot);
      // z = λ / exp(u)  =>  dz/du = -z
      grad[params.scalar_tau ? 0 : c] -= d_z * z[c];
    }
    grad[table_at + wk.cell[t]] += d_w * sigmoid(params.table_raw[wk.cell[t]]);
  }
  grad[gate_at] += d_gate * g * (1.0 - g);
  grad[eps_at] += d_eps * eps * (1.0 - eps);
}

// Soft-binned per-ground-truth-class calibration error and its derivative
// with respect to each confidence.
double soft_mece(std::span<const double> conf, std::span<const double> correct,
                 std::span<const int> gt, int class_count, int bins, double sharpness,
                 std::vector<double>* d_conf) {
  const std::size_t n = conf.size();
  const auto k = static_cast<std::size_t>(class_count);
  const auto b_count = static_cast<std::size_t>(bins);
  // Membership in bin b: sig((h - e_b)/σ) - sig((h - e_{b+1})/σ), with the
  // outer edges at ∓inf so memberships sum to 1.
  auto upper = [&](std::size_t b, double h) {  // sig((h - e_b)/σ) for edge b
    if (b == 0) return 1.0;
    if (b == b_count) return 0.0;
    return sigmoid((h - static_cast<double>(b) / bins) / sharpness);
  };
  std::vector<double> deviation(k * b_count, 0.0);
  std::vector<std::size_t> class_total(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(gt[i]);
    ++class_total[y];
    for (std::size_t b = 0; b < b_count; ++b) {
      const double mu = upper(b, conf[i]) - upper(b + 1, conf[i]);
      deviation[y * b_count + b] += mu * (correct[i] - conf[i]);
    }
  }
  int present = 0;
  double total = 0.0;
  for (std::size_t y = 0; y < k; ++y) {
    if (class_total[y] == 0) continue;
    ++present;
    double e = 0.0;
    for (std::size_t b = 0; b < b_count; ++b) e += std::abs(deviation[y * b_count + b]);
    total += e / static_cast<double>(class_total[y]);
  }
  if (present == 0) throw std::invalid_argument("mDECE: no labeled samples");
  const double result = total / present;

  if (d_conf != nullptr) {
    d_conf->assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = static_cast<std::size_t>(gt[i]);
      const double h = conf[i];
      double d = 0.0;
      for (std::size_t b = 0; b < b_count; ++b) {
        const double dev = deviation[y * b_count + b];
        const double sign = dev > 0.0 ? 1.0 : (dev < 0.0 ? -1.0 : 0.0);
        if (sign == 0.0) continue;
        const double lo = upper(b, h);
        const double hi = upper(b + 1, h);
        const double mu = lo - hi;
        const double d_mu = (lo * (1.0 - lo) - hi * (1.0 - hi)) / sharpness;
        d += sign * (d_mu * (correct[i] - h) - mu);
      }
      (*d_conf)[i] = d / (static_cast<double>(present) * static_cast<double>(class_total[y]));
    }
  }
  return result;
}

}  // namespace

ClassDistribution glfs_fuse(const ObservationSpan& obs, const GlfsParams& params,
                            double laplace_alpha) {
  if (obs.size() == 0) throw std::invalid_argument("glfs_fuse: no observations");
  if (obs.class_count != params.class_count) {
    throw std::invalid_argument("glfs_fuse: class count differs from the parameters");
  }
  VoxelWork wk;
  forward(obs, params, laplace_alpha, wk);
  return wk.p;
}

ClassDistribution glfs_fuse(std::span<const ObservationRecord> obs, const GlfsParams& params,
                            double laplace_alpha) {
  if (obs.empty()) throw std::invalid_argument("glfs_fuse: no observations");
  const auto buf = ObservationBuffer::from_records(obs, params.class_count);
  return glfs_fuse(buf.view(), params, laplace_alpha);
}

double compute_mdece(const PredictionSet& preds, int bins, double sharpness) {
  if (bins < 1) throw std::invalid_argument("compute_mdece: bin count must be >= 1");
  if (!(sharpness > 0.0)) throw std::invalid_argument("compute_mdece: sharpness must be > 0");
  if (preds.empty()) throw std::invalid_argument("compute_mdece: no labeled samples");
  std::vector<double> conf(preds.size()), correct(preds.size());
  std::vector<int> gt(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    conf[i] = preds.conf(i);
    correct[i] = preds.pred(i) == preds.gt(i) ? 1.0 : 0.0;
    gt[i] = preds.gt(i);
  }
  return soft_mece(conf, correct, gt, preds.class_count(), bins, sharpness, nullptr);
}

double glfs_loss_and_gradient(const ObservationCache& cache, const GlfsParams& params,
                              const TrainerConfig& config, std::span<const std::size_t> subset,
                              std::vector<double>* gradient) {
  if (cache.empty()) throw std::invalid_argument("glfs_loss: empty observation cache");
  if (cache.class_count() != params.class_count) {
    throw std::invalid_argument("glfs_loss: cache and parameters disagree on class count");
  }
  std::vector<std::size_t> all;
  if (subset.empty()) {
    all.resize(cache.voxel_count());
    std::iota(all.begin(), all.end(), 0);
    subset = all;
  }
  const std::size_t n = subset.size();
  const auto k = static_cast<std::size_t>(params.class_count);
  const double alpha = config.laplace_alpha;

  std::vector<double> probs(n * k);
  const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel
  {
    VoxelWork wk;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < nn; ++i) {
      forward(cache.voxel(subset[static_cast<std::size_t>(i)]), params, alpha, wk);
      std::copy(wk.p.begin(), wk.p.end(), probs.begin() + i * static_cast<std::ptrdiff_t>(k));
    }
  }

  std::vector<double> conf(n), correct(n);
  std::vector<int> gt(n), pred(n);
  double nll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> p(probs.data() + i * k, k);
    gt[i] = cache.gt_label(subset[i]);
    pred[i] = argmax(p);
    conf[i] = p[static_cast<std::size_t>(pred[i])];
    correct[i] = pred[i] == gt[i] ? 1.0 : 0.0;
    nll -= std::log(std::max(p[static_cast<std::size_t>(gt[i])], 1e-12));
  }
  nll /= static_cast<double>(n);
  std::vector<double> d_conf;
  const double calib = soft_mece(conf, correct, gt, params.class_count, config.bins,
                                 config.sharpness, gradient ? &d_conf : nullptr);
  const double loss = config.eta * calib + nll;
  if (gradient == nullptr) return loss;

  // dL/dp per voxel, then backward in fixed-size chunks summed in order so
  // the result does not depend on the thread count.
  std::vector<double> dp(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double py = probs[i * k + static_cast<std::size_t>(gt[i])];
    if (py > 1e-12) dp[i * k + static_cast<std::size_t>(gt[i])] -= 1.0 / (static_cast<double>(n) * py);
    dp[i * k + static_cast<std::size_t>(pred[i])] += config.eta * d_conf[i];
  }
  const std::size_t pc = params.parameter_count();
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(chunks * pc, 0.0);
  const auto nc = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel
  {
    VoxelWork wk;
#pragma omp for schedule(static)
    for (std::ptrdiff_t c = 0; c < nc; ++c) {
      const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
      const std::size_t end = std::min(n, begin + kChunk);
      std::span<double> g(partial.data() + static_cast<std::size_t>(c) * pc, pc);
      for (std::size_t i = begin; i < end; ++i) {
        const auto obs = cache.voxel(subset[i]);
        forward(obs, params, alpha, wk);
        backward(obs, params, alpha, wk, std::span<const double>(dp.data() + i * k, k), g);
      }
    }
  }
  gradient->assign(pc, 0.0);
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t j = 0; j < pc; ++j) (*gradient)[j] += partial[c * pc + j];
  }
  return loss;
}

double glfs_loss(const ObservationCache& cache, const GlfsParams& params,
                 const TrainerConfig& config) {
  return glfs_loss_and_gradient(cache, params, config);
}

PredictionSet glfs_predictions(const ObservationCache& cache, const GlfsParams& params,
                               double laplace_alpha) {
  const auto k = static_cast<std::size_t>(params.class_count);
  const std::size_t n = cache.voxel_count();
  std::vector<double> probs(n * k);
  const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel
  {
    VoxelWork wk;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < nn; ++i) {
      forward(cache.voxel(static_cast<std::size_t>(i)), params, laplace_alpha, wk);
      std::copy(wk.p.begin(), wk.p.end(), probs.begin() + i * static_cast<std::ptrdiff_t>(k));
    }
  }
  PredictionSet preds(params.class_count);
  preds.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    preds.add(std::span<const double>(probs.data() + i * k, k), cache.gt_label(i));
  }
  return preds;
}

TrainingResult train_glfs(const ObservationCache& full_cache, const GlfsParams& init,
                          const TrainerConfig& config) {
  init.validate();
  if (full_cache.empty()) throw std::invalid_argument("train_glfs: empty observation cache");
  if (full_cache.distinct_labels() < 2) {
    throw std::invalid_argument("train_glfs: cache needs at least two ground-truth classes");
  }
  if (config.batch_size == 0 || config.epochs < 0 || !(config.learning_rate > 0.0)) {
    throw std::invalid_argument("train_glfs: invalid trainer configuration");
  }
  const ObservationCache cache = full_cache.subsample(config.max_entries, config.seed);

  TrainingResult result;
  result.params = init;
  GlfsParams current = init;
  double best = glfs_loss(cache, current, config);
  result.loss_history.push_back(best);
  if (!std::isfinite(best)) throw std::runtime_error("train_glfs: initial loss is not finite");

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(cache.voxel_count());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      const double loss = glfs_loss_and_gradient(cache, current, config, batch, &grad);
      if (std::isnan(loss)) {
        throw std::runtime_error("train_glfs: loss diverged (NaN) at epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(step));
      }
      auto theta = current.flatten();
      for (std::size_t j = 0; j < theta.size(); ++j) {
        // Infinite gate logits stay pinned.
        if (std::isfinite(theta[j])) theta[j] -= config.learning_rate * grad[j];
      }
      current.unflatten(theta);
    }
    const double full = glfs_loss(cache, current, config);
    if (std::isnan(full)) {
      throw std::runtime_error("train_glfs: loss diverged (NaN) after epoch " +
                               std::to_string(epoch));
    }
    result.loss_history.push_back(full);
    if (full < best) {
      best = full;
      result.params = current;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace semfuse

#include "dsgd/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "dsgd/errors.hpp"

namespace dsgd {

std::string_view to_string(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::Quadratic: return "quadratic";
    case ProblemKind::Logistic: return "logistic";
    case ProblemKind::TinyMlp: return "tiny-mlp";
  }
  return "unknown";
}

ProblemKind parse_problem_kind(std::string_view name) {
  if (name == "quadratic") return ProblemKind::Quadratic;
  if (name == "logistic") return ProblemKind::Logistic;
  if (name == "tiny-mlp" || name == "mlp") return ProblemKind::TinyMlp;
  throw ConfigError(fmt::format("unknown problem kind '{}'", name));
}

void ProblemSpec::validate() const {
  if (nodes < 1) throw ConfigError("problem needs at least one node");
  if (kind != ProblemKind::TinyMlp && dim < 1) throw ConfigError("problem dimension must be >= 1");
  if (samples_per_node < 1) throw ConfigError("samples_per_node must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (noise_scale < 0.0 || heterogeneity < 0.0 || l2 < 0.0)
    throw ConfigError("noise_scale, heterogeneity and l2 must be non-negative");
}

// ---------------------------------------------------------------- Problem

void Problem::check_node(int node) const {
  if (node < 0 || node >= nodes_)
    throw DimensionError(fmt::format("node {} outside [0, {})", node, nodes_));
}

void Problem::check_dim(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(dim_))
    throw DimensionError(fmt::format("parameter has dimension {}, expected {}", x.size(), dim_));
}

double Problem::loss(std::span<const double> x) const {
  double sum = 0.0;
  for (int i = 0; i < nodes_; ++i) sum += local_loss(i, x);
  return sum / nodes_;
}

Vector Problem::local_grad(int node, std::span<const double> x) const {
  Vector g(static_cast<std::size_t>(dim_));
  local_grad(node, x, g);
  return g;
}

Vector Problem::grad(std::span<const double> x) const {
  Vector g(static_cast<std::size_t>(dim_), 0.0);
  Vector gi(g.size());
  for (int i = 0; i < nodes_; ++i) {
    local_grad(i, x, gi);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k];
  }
  for (double& v : g) v /= nodes_;
  return g;
}

namespace {

Vector unit_direction(std::size_t len, Rng& rng) {
  Vector u(len);
  double norm = 0.0;
  do {
    for (double& v : u) v = rng.normal();
    norm = std::sqrt(squared_norm(u));
  } while (norm == 0.0);
  for (double& v : u) v /= norm;
  return u;
}

double largest_eigenvalue(const Matrix& symmetric) { return symmetric_eigenvalues(symmetric).front(); }

Matrix gram(const Matrix& a, double scale) {
  Matrix g = multiply(a.transposed(), a);
  for (double& v : g.data()) v *= scale;
  return g;
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Exact minibatch (with replacement) variance from per-sample gradients.
class SampleMoments {
 public:
  explicit SampleMoments(std::size_t dim) : mean_(dim, 0.0) {}
  void add(std::span<const double> g) {
    for (std::size_t k = 0; k < g.size(); ++k) mean_[k] += g[k];
    sq_ += squared_norm(g);
    ++count_;
  }
  double minibatch_variance(int batch) const {
    const double m = static_cast<double>(count_);
    const double mean_sq = squared_norm(mean_) / (m * m);
    return std::max(0.0, sq_ / m - mean_sq) / batch;
  }

 private:
  Vector mean_;
  double sq_ = 0.0;
  std::size_t count_ = 0;
};

}  // namespace

// -------------------------------------------------------------- Quadratic

QuadraticProblem::QuadraticProblem(std::vector<Shard> shards, double noise_scale)
    : Problem(shards.empty() ? 0 : static_cast<int>(shards.front().a.cols()),
              static_cast<int>(shards.size())),
      shards_(std::move(shards)),
      noise_scale_(noise_scale) {
  if (shards_.empty()) throw ConfigError("quadratic problem needs at least one shard");
  for (const Shard& s : shards_) {
    if (s.a.cols() != static_cast<std::size_t>(dim()) || s.a.rows() != s.b.size())
      throw DimensionError("quadratic shard dimensions are inconsistent");
    hessians_.push_back(gram(s.a, 1.0));
    smoothness_ = std::max(smoothness_, largest_eigenvalue(hessians_.back()));
  }
  global_smoothness_ = largest_eigenvalue(mean_hessian());
}

Matrix QuadraticProblem::mean_hessian() const {
  Matrix h(static_cast<std::size_t>(dim()), static_cast<std::size_t>(dim()));
  for (const Matrix& hi : hessians_)
    for (std::size_t k = 0; k < h.data().size(); ++k) h.data()[k] += hi.data()[k];
  for (double& v : h.data()) v /= nodes();
  return h;
}

QuadraticProblem QuadraticProblem::generate(const ProblemSpec& spec) {
  spec.validate();
  const auto m = static_cast<std::size_t>(spec.samples_per_node);
  const auto d = static_cast<std::size_t>(spec.dim);
  Rng rng = Rng::stream(spec.data_seed, StreamTag::Data);
  const double row_scale = 1.0 / std::sqrt(static_cast<double>(m));

  Matrix base_a(m, d);
  for (double& v : base_a.data()) v = rng.normal() * row_scale;
  Vector base_b(m);
  for (double& v : base_b) v = rng.normal();

  std::vector<Shard> shards;
  for (int i = 0; i < spec.nodes; ++i) {
    Shard s{base_a, base_b};
    if (spec.heterogeneity > 0.0) {
      Rng node_rng = Rng::stream(spec.data_seed, StreamTag::Data, static_cast<std::uint64_t>(i) + 1);
      for (double& v : s.a.data()) v += spec.heterogeneity * node_rng.normal() * row_scale;
      const Vector u = unit_direction(m, node_rng);
      for (std::size_t k = 0; k < m; ++k) s.b[k] += spec.heterogeneity * u[k];
    }
    shards.push_back(std::move(s));
  }

  double smooth = 0.0;
  for (const Shard& s : shards) smooth = std::max(smooth, largest_eigenvalue(gram(s.a, 1.0)));
  const double scale = 1.0 / std::sqrt(smooth);
  for (Shard& s : shards)
    for (double& v : s.a.data()) v *= scale;
  return QuadraticProblem(std::move(shards), spec.noise_scale);
}

double QuadraticProblem::local_loss(int node, std::span<const double> x) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  double sum = 0.0;
  for (std::size_t r = 0; r < s.a.rows(); ++r) {
    const double res = dot(s.a.row(r), x) - s.b[r];
    sum += res * res;
  }
  return 0.5 * sum;
}

void QuadraticProblem::local_grad(int node, std::span<const double> x, std::span<double> out) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < s.a.rows(); ++r) {
    const double res = dot(s.a.row(r), x) - s.b[r];
    auto row = s.a.row(r);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += res * row[k];
  }
}

void QuadraticProblem::stochastic_grad(int node, std::span<const double> x, Rng& rng,
                                       std::span<double> out) const {
  local_grad(node, x, out);
  if (noise_scale_ == 0.0) return;
  const double sd = noise_scale_ / std::sqrt(static_cast<double>(dim()));
  for (double& v : out) v += sd * rng.normal();
}

double QuadraticProblem::noise_variance(int node, std::span<const double>) const {
  check_node(node);
  return noise_scale_ * noise_scale_;
}

// --------------------------------------------------------------- Logistic

LogisticProblem::LogisticProblem(std::vector<Shard> shards, double l2, int batch_size)
    : Problem(shards.empty() ? 0 : static_cast<int>(shards.front().features.cols()),
              static_cast<int>(shards.size())),
      shards_(std::move(shards)),
      l2_(l2),
      batch_size_(batch_size) {
  if (shards_.empty()) throw ConfigError("logistic problem needs at least one shard");
  Matrix mean_cov(static_cast<std::size_t>(dim()), static_cast<std::size_t>(dim()));
  for (const Shard& s : shards_) {
    if (s.features.rows() != s.labels.size() || s.features.rows() == 0)
      throw DimensionError("logistic shard dimensions are inconsistent");
    const Matrix cov = gram(s.features, 1.0 / static_cast<double>(s.features.rows()));
    smoothness_ = std::max(smoothness_, largest_eigenvalue(cov) / 4.0 + l2_);
    for (std::size_t k = 0; k < cov.data().size(); ++k)
      mean_cov.data()[k] += cov.data()[k] / static_cast<double>(shards_.size());
  }
  global_smoothness_ = largest_eigenvalue(mean_cov) / 4.0 + l2_;
}

LogisticProblem LogisticProblem::generate(const ProblemSpec& spec) {
  spec.validate();
  const auto m = static_cast<std::size_t>(spec.samples_per_node);
  const auto d = static_cast<std::size_t>(spec.dim);
  Rng rng = Rng::stream(spec.data_seed, StreamTag::Data);
  Vector truth(d);
  for (double& v : truth) v = rng.normal();
  Shard base{Matrix(m, d), Vector(m)};
  for (double& v : base.features.data()) v = rng.normal();
  for (std::size_t j = 0; j < m; ++j) {
    const double prob = sigmoid(dot(base.features.row(j), truth));
    base.labels[j] = rng.uniform(0.0, 1.0) < prob ? 1.0 : -1.0;
  }

  std::vector<Shard> shards;
  for (int i = 0; i < spec.nodes; ++i) {
    Shard s = base;
    if (spec.heterogeneity > 0.0) {
      Rng node_rng = Rng::stream(spec.data_seed, StreamTag::Data, static_cast<std::uint64_t>(i) + 1);
      const Vector u = unit_direction(d, node_rng);
      for (std::size_t j = 0; j < m; ++j) {
        auto row = s.features.row(j);
        for (std::size_t k = 0; k < d; ++k) row[k] += spec.heterogeneity * u[k];
      }
    }
    shards.push_back(std::move(s));
  }
  return LogisticProblem(std::move(shards), spec.l2, spec.batch_size);
}

double LogisticProblem::local_loss(int node, std::span<const double> x) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  double sum = 0.0;
  for (std::size_t j = 0; j < s.labels.size(); ++j)
    sum += softplus(-s.labels[j] * dot(s.features.row(j), x));
  return sum / static_cast<double>(s.labels.size()) + 0.5 * l2_ * squared_norm(x);
}

void LogisticProblem::sample_grad(const Shard& s, std::size_t j, std::span<const double> x,
                                  std::span<double> out) const {
  const double y = s.labels[j];
  const double coeff = -y * sigmoid(-y * dot(s.features.row(j), x));
  auto row = s.features.row(j);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = coeff * row[k];
}

void LogisticProblem::local_grad(int node, std::span<const double> x, std::span<double> out) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  Vector g(out.size());
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < s.labels.size(); ++j) {
    sample_grad(s, j, x, g);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += g[k];
  }
  const double inv = 1.0 / static_cast<double>(s.labels.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = out[k] * inv + l2_ * x[k];
}

void LogisticProblem::stochastic_grad(int node, std::span<const double> x, Rng& rng,
                                      std::span<double> out) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  Vector g(out.size());
  std::fill(out.begin(), out.end(), 0.0);
  for (int b = 0; b < batch_size_; ++b) {
    sample_grad(s, rng.index(s.labels.size()), x, g);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += g[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = out[k] / batch_size_ + l2_ * x[k];
}

double LogisticProblem::noise_variance(int node, std::span<const double> x) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  SampleMoments moments(x.size());
  Vector g(x.size());
  for (std::size_t j = 0; j < s.labels.size(); ++j) {
    sample_grad(s, j, x, g);
    moments.add(g);
  }
  return moments.minibatch_variance(batch_size_);
}

// ---------------------------------------------------------------- TinyMlp

namespace {

constexpr int kW1 = 0;
constexpr int kB1 = kW1 + TinyMlpProblem::kHidden * TinyMlpProblem::kInputs;
constexpr int kW2 = kB1 + TinyMlpProblem::kHidden;
constexpr int kB2 = kW2 + TinyMlpProblem::kClasses * TinyMlpProblem::kHidden;

}  // namespace

TinyMlpProblem::TinyMlpProblem(std::vector<Shard> shards, int batch_size)
    : Problem(kParams, static_cast<int>(shards.size())),
      shards_(std::move(shards)),
      batch_size_(batch_size) {
  if (shards_.empty()) throw ConfigError("MLP problem needs at least one shard");
  for (const Shard& s : shards_)
    if (s.inputs.cols() != kInputs || s.inputs.rows() != s.labels.size() || s.labels.empty())
      throw DimensionError("MLP shard dimensions are inconsistent");
}

TinyMlpProblem TinyMlpProblem::generate(const ProblemSpec& spec) {
  spec.validate();
  const auto m = static_cast<std::size_t>(spec.samples_per_node);
  Rng rng = Rng::stream(spec.data_seed, StreamTag::Data);
  // XOR-style mixture: each class is two Gaussian blobs on opposite corners.
  constexpr double kCenters[2][2][2] = {{{1.0, 1.0}, {-1.0, -1.0}}, {{1.0, -1.0}, {-1.0, 1.0}}};
  Shard base{Matrix(m, kInputs), std::vector<int>(m)};
  for (std::size_t j = 0; j < m; ++j) {
    const int label = static_cast<int>(j % 2);
    const std::size_t blob = rng.index(2);
    base.labels[j] = label;
    for (int k = 0; k < kInputs; ++k)
      base.inputs(j, static_cast<std::size_t>(k)) = kCenters[label][blob][k] + 0.5 * rng.normal();
  }
  std::vector<Shard> shards;
  for (int i = 0; i < spec.nodes; ++i) {
    Shard s = base;
    if (spec.heterogeneity > 0.0) {
      Rng node_rng = Rng::stream(spec.data_seed, StreamTag::Data, static_cast<std::uint64_t>(i) + 1);
      const Vector u = unit_direction(kInputs, node_rng);
      for (std::size_t j = 0; j < m; ++j)
        for (int k = 0; k < kInputs; ++k)
          s.inputs(j, static_cast<std::size_t>(k)) += spec.heterogeneity * u[static_cast<std::size_t>(k)];
    }
    shards.push_back(std::move(s));
  }
  return TinyMlpProblem(std::move(shards), spec.batch_size);
}

Vector TinyMlpProblem::initial_parameters(Rng& rng) {
  Vector x(kParams, 0.0);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(kInputs));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(kHidden));
  for (int k = kW1; k < kB1; ++k) x[static_cast<std::size_t>(k)] = s1 * rng.normal();
  for (int k = kW2; k < kB2; ++k) x[static_cast<std::size_t>(k)] = s2 * rng.normal();
  return x;
}

double TinyMlpProblem::sample_loss_grad(const Shard& s, std::size_t j, std::span<const double> x,
                                        std::span<double> grad) const {
  double hidden[kHidden];
  double logits[kClasses];
  const double in0 = s.inputs(j, 0);
  const double in1 = s.inputs(j, 1);
  for (int h = 0; h < kHidden; ++h) {
    const double z = x[kW1 + h * kInputs] * in0 + x[kW1 + h * kInputs + 1] * in1 + x[kB1 + h];
    hidden[h] = std::tanh(z);
  }
  for (int c = 0; c < kClasses; ++c) {
    double o = x[kB2 + c];
    for (int h = 0; h < kHidden; ++h) o += x[kW2 + c * kHidden + h] * hidden[h];
    logits[c] = o;
  }
  const double peak = std::max(logits[0], logits[1]);
  const double denom = std::exp(logits[0] - peak) + std::exp(logits[1] - peak);
  const int label = s.labels[j];
  const double loss = -(logits[label] - peak - std::log(denom));
  if (grad.empty()) return loss;

  double delta[kClasses];
  for (int c = 0; c < kClasses; ++c)
    delta[c] = std::exp(logits[c] - peak) / denom - (c == label ? 1.0 : 0.0);
  for (int c = 0; c < kClasses; ++c) {
    grad[kB2 + c] = delta[c];
    for (int h = 0; h < kHidden; ++h) grad[kW2 + c * kHidden + h] = delta[c] * hidden[h];
  }
  for (int h = 0; h < kHidden; ++h) {
    double back = 0.0;
    for (int c = 0; c < kClasses; ++c) back += x[kW2 + c * kHidden + h] * delta[c];
    const double dz = back * (1.0 - hidden[h] * hidden[h]);
    grad[kW1 + h * kInputs] = dz * in0;
    grad[kW1 + h * kInputs + 1] = dz * in1;
    grad[kB1 + h] = dz;
  }
  return loss;
}

double TinyMlpProblem::local_loss(int node, std::span<const double> x) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  double sum = 0.0;
  for (std::size_t j = 0; j < s.labels.size(); ++j) sum += sample_loss_grad(s, j, x, {});
  return sum / static_cast<double>(s.labels.size());
}

void TinyMlpProblem::local_grad(int node, std::span<const double> x, std::span<double> out) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  Vector g(kParams);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < s.labels.size(); ++j) {
    sample_loss_grad(s, j, x, g);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += g[k];
  }
  for (double& v : out) v /= static_cast<double>(s.labels.size());
}

void TinyMlpProblem::stochastic_grad(int node, std::span<const double> x, Rng& rng,
                                     std::span<double> out) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  Vector g(kParams);
  std::fill(out.begin(), out.end(), 0.0);
  for (int b = 0; b < batch_size_; ++b) {
    sample_loss_grad(s, rng.index(s.labels.size()), x, g);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += g[k];
  }
  for (double& v : out) v /= batch_size_;
}

double TinyMlpProblem::noise_variance(int node, std::span<const double> x) const {
  check_node(node);
  check_dim(x);
  const Shard& s = shards_[static_cast<std::size_t>(node)];
  SampleMoments moments(kParams);
  Vector g(kParams);
  for (std::size_t j = 0; j < s.labels.size(); ++j) {
    sample_loss_grad(s, j, x, g);
    moments.add(g);
  }
  return moments.minibatch_variance(batch_size_);
}

// ------------------------------------------------------------ free functions

std::unique_ptr<Problem> make_problem(const ProblemSpec& spec) {
  switch (spec.kind) {
    case ProblemKind::Quadratic: return std::make_unique<QuadraticProblem>(QuadraticProblem::generate(spec));
    case ProblemKind::Logistic: return std::make_unique<LogisticProblem>(LogisticProblem::generate(spec));
    case ProblemKind::TinyMlp: return std::make_unique<TinyMlpProblem>(TinyMlpProblem::generate(spec));
  }
  throw ConfigError("unhandled problem kind");
}

std::vector<Vector> default_probe_points(const Problem& problem, Rng& rng,
                                         std::span<const double> current) {
  std::vector<Vector> probes;
  for (int k = 0; k < 10; ++k) {
    Vector x(static_cast<std::size_t>(problem.dim()));
    for (double& v : x) v = rng.normal();
    probes.push_back(std::move(x));
  }
  if (!current.empty()) probes.emplace_back(current.begin(), current.end());
  return probes;
}

namespace {

double ratio(std::span<const double> ga, std::span<const double> gb, std::span<const double> xa,
             std::span<const double> xb) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < ga.size(); ++k) {
    num += (ga[k] - gb[k]) * (ga[k] - gb[k]);
    den += (xa[k] - xb[k]) * (xa[k] - xb[k]);
  }
  return den == 0.0 ? 0.0 : std::sqrt(num / den);
}

}  // namespace

ProblemConstants constants(const Problem& problem, std::span<const Vector> probes) {
  if (probes.size() < 10) throw ConfigError("constants needs at least 10 probe points");
  const int n = problem.nodes();
  ProblemConstants out;

  for (const Vector& x : probes) {
    const Vector g = problem.grad(x);
    double noise = 0.0;
    double diversity = 0.0;
    for (int i = 0; i < n; ++i) {
      noise += problem.noise_variance(i, x);
      const Vector gi = problem.local_grad(i, x);
      for (std::size_t k = 0; k < gi.size(); ++k) diversity += (gi[k] - g[k]) * (gi[k] - g[k]);
    }
    out.sigma2 = std::max(out.sigma2, noise / n);
    out.zeta2 = std::max(out.zeta2, diversity / n);
  }

  if (problem.smoothness_bound() > 0.0) {
    out.L = problem.smoothness_bound();
    out.L_global = problem.global_smoothness_bound();
    return out;
  }
  // No closed form: largest gradient-difference ratio over probe pairs and
  // short random perturbations of each probe.
  Rng rng = Rng::stream(0x51ab1e, StreamTag::Probe);
  auto probe_pair = [&](const Vector& a, const Vector& b) {
    const Vector ga = problem.grad(a);
    const Vector gb = problem.grad(b);
    out.L_global = std::max(out.L_global, ratio(ga, gb, a, b));
    for (int i = 0; i < n; ++i)
      out.L = std::max(out.L, ratio(problem.local_grad(i, a), problem.local_grad(i, b), a, b));
  };
  for (std::size_t p = 0; p < probes.size(); ++p) {
    Vector near = probes[p];
    for (double& v : near) v += 1e-3 * rng.normal();
    probe_pair(probes[p], near);
    if (p + 1 < probes.size()) probe_pair(probes[p], probes[p + 1]);
  }
  return out;
}

double estimate_smoothness(const Problem& problem, std::span<const double> x,
                           std::span<const double> direction, double lr) {
  if (direction.size() != x.size()) throw DimensionError("update direction has the wrong dimension");
  if (squared_norm(direction) == 0.0) throw ConfigError("estimate_smoothness needs a nonzero direction");
  if (!(lr > 0.0)) throw ConfigError("estimate_smoothness needs a positive step size");
  constexpr int kProbeSteps = 8;
  constexpr double kStepFraction = 0.2;
  Vector prev(x.begin(), x.end());
  Vector prev_grad = problem.grad(prev);
  double best = 0.0;
  for (int k = 1; k <= kProbeSteps; ++k) {
    Vector next(x.size());
    for (std::size_t c = 0; c < x.size(); ++c)
      next[c] = x[c] + k * kStepFraction * lr * direction[c];
    Vector next_grad = problem.grad(next);
    best = std::max(best, ratio(next_grad, prev_grad, next, prev));
    prev = std::move(next);
    prev_grad = std::move(next_grad);
  }
  return best;
}

}  // namespace dsgd

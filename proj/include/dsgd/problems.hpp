#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "dsgd/linalg.hpp"
#include "dsgd/rng.hpp"

namespace dsgd {

enum class ProblemKind { Quadratic, Logistic, TinyMlp };

std::string_view to_string(ProblemKind kind);
ProblemKind parse_problem_kind(std::string_view name);

/// Synthetic problem settings. Every node starts from the same base shard;
/// `heterogeneity` moves node i's shard along a fixed unit direction u_i,
/// so heterogeneity = 0 gives identical shards.
struct ProblemSpec {
  ProblemKind kind = ProblemKind::Quadratic;
  int dim = 8;               // ignored by TinyMlp (fixed architecture)
  int nodes = 4;
  int samples_per_node = 32;
  double noise_scale = 0.0;  // Quadratic: additive noise, sigma^2 = noise_scale^2
  double heterogeneity = 0.0;
  int batch_size = 8;        // Logistic / TinyMlp minibatch
  double l2 = 1e-3;          // Logistic ridge term
  std::uint64_t data_seed = 1;

  void validate() const;
};

struct ProblemConstants {
  double L = 0.0;         // per-node smoothness bound (max over nodes)
  double L_global = 0.0;  // smoothness of the average objective f
  double sigma2 = 0.0;
  double zeta2 = 0.0;
};

/// f(x) = (1/n) sum_i f_i(x) with per-node exact and stochastic gradients.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual ProblemKind kind() const noexcept = 0;
  int dim() const noexcept { return dim_; }
  int nodes() const noexcept { return nodes_; }

  virtual double local_loss(int node, std::span<const double> x) const = 0;
  virtual void local_grad(int node, std::span<const double> x, std::span<double> out) const = 0;
  /// One draw of grad F_i(x, xi); unbiased for local_grad.
  virtual void stochastic_grad(int node, std::span<const double> x, Rng& rng,
                               std::span<double> out) const = 0;
  /// E ||grad F_i(x, xi) - grad f_i(x)||^2 at x, computed exactly.
  virtual double noise_variance(int node, std::span<const double> x) const = 0;
  /// Exact per-node smoothness bound where one exists (Quadratic, Logistic).
  virtual double smoothness_bound() const { return 0.0; }
  virtual double global_smoothness_bound() const { return smoothness_bound(); }

  double loss(std::span<const double> x) const;
  Vector grad(std::span<const double> x) const;
  Vector local_grad(int node, std::span<const double> x) const;

 protected:
  Problem(int dim, int nodes) : dim_(dim), nodes_(nodes) {}
  void check_node(int node) const;
  void check_dim(std::span<const double> x) const;

 private:
  int dim_;
  int nodes_;
};

/// f_i(x) = 1/2 ||A_i x - b_i||^2 plus isotropic Gaussian gradient noise with
/// per-coordinate variance noise_scale^2 / d.
class QuadraticProblem final : public Problem {
 public:
  struct Shard {
    Matrix a;
    Vector b;
  };

  QuadraticProblem(std::vector<Shard> shards, double noise_scale);
  /// Random shards normalised so the per-node smoothness constant is 1.
  static QuadraticProblem generate(const ProblemSpec& spec);

  ProblemKind kind() const noexcept override { return ProblemKind::Quadratic; }
  double local_loss(int node, std::span<const double> x) const override;
  void local_grad(int node, std::span<const double> x, std::span<double> out) const override;
  void stochastic_grad(int node, std::span<const double> x, Rng& rng,
                       std::span<double> out) const override;
  double noise_variance(int node, std::span<const double> x) const override;
  double smoothness_bound() const override { return smoothness_; }
  double global_smoothness_bound() const override { return global_smoothness_; }

  const Shard& shard(int node) const { return shards_.at(static_cast<std::size_t>(node)); }
  const Matrix& hessian(int node) const { return hessians_.at(static_cast<std::size_t>(node)); }
  Matrix mean_hessian() const;
  double noise_scale() const noexcept { return noise_scale_; }

 private:
  std::vector<Shard> shards_;
  std::vector<Matrix> hessians_;
  double noise_scale_;
  double smoothness_ = 0.0;
  double global_smoothness_ = 0.0;
};

/// Binary logistic regression with labels in {-1, +1} and a ridge term.
class LogisticProblem final : public Problem {
 public:
  struct Shard {
    Matrix features;  // samples x dim
    Vector labels;
  };

  LogisticProblem(std::vector<Shard> shards, double l2, int batch_size);
  static LogisticProblem generate(const ProblemSpec& spec);

  ProblemKind kind() const noexcept override { return ProblemKind::Logistic; }
  double local_loss(int node, std::span<const double> x) const override;
  void local_grad(int node, std::span<const double> x, std::span<double> out) const override;
  void stochastic_grad(int node, std::span<const double> x, Rng& rng,
                       std::span<double> out) const override;
  double noise_variance(int node, std::span<const double> x) const override;
  double smoothness_bound() const override { return smoothness_; }
  double global_smoothness_bound() const override { return global_smoothness_; }

  const Shard& shard(int node) const { return shards_.at(static_cast<std::size_t>(node)); }
  double l2() const noexcept { return l2_; }

 private:
  void sample_grad(const Shard& s, std::size_t j, std::span<const double> x,
                   std::span<double> out) const;

  std::vector<Shard> shards_;
  double l2_;
  int batch_size_;
  double smoothness_ = 0.0;
  double global_smoothness_ = 0.0;
};

/// 2-16-2 tanh network with softmax cross-entropy on a two-class 2-d
/// Gaussian mixture. Parameters: W1 (16x2), b1 (16), W2 (2x16), b2 (2).
class TinyMlpProblem final : public Problem {
 public:
  static constexpr int kInputs = 2;
  static constexpr int kHidden = 16;
  static constexpr int kClasses = 2;
  static constexpr int kParams = kHidden * kInputs + kHidden + kClasses * kHidden + kClasses;

  struct Shard {
    Matrix inputs;           // samples x 2
    std::vector<int> labels; // 0 or 1
  };

  TinyMlpProblem(std::vector<Shard> shards, int batch_size);
  static TinyMlpProblem generate(const ProblemSpec& spec);

  ProblemKind kind() const noexcept override { return ProblemKind::TinyMlp; }
  double local_loss(int node, std::span<const double> x) const override;
  void local_grad(int node, std::span<const double> x, std::span<double> out) const override;
  void stochastic_grad(int node, std::span<const double> x, Rng& rng,
                       std::span<double> out) const override;
  double noise_variance(int node, std::span<const double> x) const override;

  const Shard& shard(int node) const { return shards_.at(static_cast<std::size_t>(node)); }
  /// Small random initial parameters.
  static Vector initial_parameters(Rng& rng);

 private:
  double sample_loss_grad(const Shard& s, std::size_t j, std::span<const double> x,
                          std::span<double> grad) const;

  std::vector<Shard> shards_;
  int batch_size_;
};

std::unique_ptr<Problem> make_problem(const ProblemSpec& spec);

/// 10 unit-Gaussian points around the origin, plus `current` when given.
std::vector<Vector> default_probe_points(const Problem& problem, Rng& rng,
                                         std::span<const double> current = {});

/// L (exact where the problem has a closed form, otherwise the largest
/// gradient-difference ratio found between probe pairs), sigma^2 and zeta^2
/// as maxima of the bounded-noise / bounded-diversity left-hand sides over
/// the probe points.
ProblemConstants constants(const Problem& problem, std::span<const Vector> probes);

/// Empirical smoothness along an update: 8 extra points spaced by 0.2 * lr
/// along `direction`; returns the largest gradient-difference ratio between
/// consecutive points.
double estimate_smoothness(const Problem& problem, std::span<const double> x,
                           std::span<const double> direction, double lr);

}  // namespace dsgd

// Pose-graph factors and a Levenberg-Marquardt solver over SE(3).

#pragma once

#include "patchtrack/errors.hpp"
#include "patchtrack/geometry.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <compare>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace patchtrack {

enum class VarKind { Object, EndEffector };

struct VariableKey {
  VarKind kind = VarKind::Object;
  int step = 0;

  auto operator<=>(const VariableKey&) const = default;

  std::string str() const { return (kind == VarKind::Object ? "o" : "e") + std::to_string(step); }
};

inline VariableKey object_key(int t) { return {VarKind::Object, t}; }
inline VariableKey effector_key(int t) { return {VarKind::EndEffector, t}; }

/// Diagonal noise: sigmas ordered (rx, ry, rz [rad], tx, ty, tz [mm]).
struct NoiseModel {
  Vec6 sigmas = Vec6::Ones();

  static NoiseModel isotropic(double rot_sigma, double trans_sigma) {
    NoiseModel n;
    n.sigmas << Vec3::Constant(rot_sigma), Vec3::Constant(trans_sigma);
    n.validate();
    return n;
  }

  void validate() const {
    for (int i = 0; i < 6; ++i) {
      if (!(sigmas[i] > 0.0) || !std::isfinite(sigmas[i])) throw ConfigError("noise sigmas must be positive");
    }
  }

  /// For noise that is sampled rather than whitened, zero sigmas are allowed.
  void validate_nonnegative() const {
    for (int i = 0; i < 6; ++i) {
      if (!(sigmas[i] >= 0.0) || !std::isfinite(sigmas[i])) throw ConfigError("noise sigmas must be >= 0");
    }
  }

  Vec6 whiten(const Vec6& v) const { return v.cwiseQuotient(sigmas); }
};

/// Relative sensor-in-object motion between steps t-1 and t, measured by
/// registering consecutive contact clouds.
struct Im2ImFactor {
  VariableKey o_prev, e_prev, o, e;
  Pose measured;
  NoiseModel noise;
};

/// Object-from-sensor pose at step t, measured by registering the contact
/// cloud against the local patch (or a model cloud).
struct Im2PatchFactor {
  VariableKey o, e;
  Pose measured;
  NoiseModel noise;
};

/// Constant object velocity over three consecutive steps.
struct ConstVelFactor {
  VariableKey o0, o1, o2;
  NoiseModel noise;
};

struct EffPriorFactor {
  VariableKey e;
  Pose measured;
  NoiseModel noise;
};

struct VisPriorFactor {
  VariableKey o;
  Pose measured;
  NoiseModel noise;
};

using Factor = std::variant<Im2ImFactor, Im2PatchFactor, ConstVelFactor, EffPriorFactor, VisPriorFactor>;

inline std::string factor_type(const Factor& f) {
  static const char* names[] = {"im2im", "im2patch", "constvel", "eff_prior", "vis_prior"};
  return names[f.index()];
}

inline std::vector<VariableKey> factor_keys(const Factor& f) {
  return std::visit(
      [](const auto& x) -> std::vector<VariableKey> {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Im2ImFactor>) return {x.o_prev, x.e_prev, x.o, x.e};
        if constexpr (std::is_same_v<T, Im2PatchFactor>) return {x.o, x.e};
        if constexpr (std::is_same_v<T, ConstVelFactor>) return {x.o0, x.o1, x.o2};
        if constexpr (std::is_same_v<T, EffPriorFactor>) return {x.e};
        if constexpr (std::is_same_v<T, VisPriorFactor>) return {x.o};
      },
      f);
}

inline const NoiseModel& factor_noise(const Factor& f) {
  return std::visit([](const auto& x) -> const NoiseModel& { return x.noise; }, f);
}

using Values = std::map<VariableKey, Pose>;

inline const Pose& at(const Values& values, const VariableKey& key) {
  auto it = values.find(key);
  if (it == values.end()) throw std::out_of_range("no value for variable " + key.str());
  return it->second;
}

/// Object-from-sensor transform o^-1 e.
inline Pose object_from_sensor(const Pose& o, const Pose& e) { return o.inverse() * e; }

/// Unwhitened error log(measured^-1 predicted), with the poses given in
/// factor_keys order.
inline Twist factor_error(const Factor& f, std::span<const Pose> x) {
  return std::visit(
      [&](const auto& fac) -> Twist {
        using T = std::decay_t<decltype(fac)>;
        if constexpr (std::is_same_v<T, Im2ImFactor>) {
          const Pose pred = object_from_sensor(x[0], x[1]).inverse() * object_from_sensor(x[2], x[3]);
          return ominus(fac.measured, pred);
        } else if constexpr (std::is_same_v<T, Im2PatchFactor>) {
          return ominus(fac.measured, object_from_sensor(x[0], x[1]));
        } else if constexpr (std::is_same_v<T, ConstVelFactor>) {
          return ominus(x[0].inverse() * x[1], x[1].inverse() * x[2]);
        } else {
          return ominus(fac.measured, x[0]);
        }
      },
      f);
}

inline std::vector<Pose> gather(const Factor& f, const Values& values) {
  std::vector<Pose> x;
  for (const auto& k : factor_keys(f)) x.push_back(at(values, k));
  return x;
}

/// Whitened residual of one factor.
inline Vec6 residual(const Factor& f, const Values& values) {
  const auto x = gather(f, values);
  return factor_noise(f).whiten(factor_error(f, x).vector());
}

struct FactorGraph {
  std::vector<Factor> factors;

  void add(Factor f) { factors.push_back(std::move(f)); }
  std::size_t size() const { return factors.size(); }
  bool empty() const { return factors.empty(); }
};

/// 0.5 * sum of squared whitened residuals.
inline double graph_cost(const FactorGraph& graph, const Values& values) {
  double c = 0.0;
  for (const auto& f : graph.factors) c += residual(f, values).squaredNorm();
  return 0.5 * c;
}

/// Stacked whitened residual and its sparse Jacobian. Variable block columns
/// follow `ordering` (sorted keys of the linearization point).
struct LinearSystem {
  std::vector<VariableKey> ordering;
  Eigen::SparseMatrix<double> J;
  VecX r;

  Eigen::Index column_of(const VariableKey& k) const {
    auto it = std::lower_bound(ordering.begin(), ordering.end(), k);
    if (it == ordering.end() || *it != k) throw std::out_of_range("variable not in ordering: " + k.str());
    return 6 * static_cast<Eigen::Index>(it - ordering.begin());
  }
};

/// Numerical Jacobian blocks of each factor (central differences through
/// oplus). A key appearing twice in one factor gets the sum of its blocks.
inline LinearSystem linearize(const FactorGraph& graph, const Values& values, double eps = 1e-6) {
  LinearSystem sys;
  for (const auto& [k, v] : values) sys.ordering.push_back(k);
  const auto rows = static_cast<Eigen::Index>(6 * graph.size());
  sys.r = VecX::Zero(rows);
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const Factor& f = graph.factors[i];
    const auto keys = factor_keys(f);
    const auto x = gather(f, values);
    const NoiseModel& noise = factor_noise(f);
    auto whitened = [&](std::span<const Pose> p) -> Vec6 { return noise.whiten(factor_error(f, p).vector()); };
    const auto row = static_cast<Eigen::Index>(6 * i);
    sys.r.segment<6>(row) = whitened(x);
    const MatX Jf = numerical_jacobian(whitened, std::span<const Pose>(x), eps);
    for (std::size_t j = 0; j < keys.size(); ++j) {
      const Eigen::Index col = sys.column_of(keys[j]);
      for (int a = 0; a < 6; ++a) {
        for (int b = 0; b < 6; ++b) {
          const double v = Jf(a, static_cast<Eigen::Index>(6 * j) + b);
          if (v != 0.0) trips.emplace_back(row + a, col + b, v);
        }
      }
    }
  }
  sys.J.resize(rows, static_cast<Eigen::Index>(6 * sys.ordering.size()));
  sys.J.setFromTriplets(trips.begin(), trips.end());  // duplicates are summed
  return sys;
}

struct LMParams {
  int max_iterations = 50;
  double lambda_init = 1e-4;
  double lambda_factor = 10.0;
  double cost_tolerance = 1e-9;  ///< relative cost decrease
  double absolute_tolerance = 1e-24;
  double lambda_max = 1e12;
};

struct OptimizeStats {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  std::vector<double> accepted_costs;  ///< cost after every accepted step
};

struct OptimizeResult {
  Values values;
  OptimizeStats stats;
};

/// Throws GaugeError if some variable is touched by no factor, and
/// std::out_of_range if a factor references a missing variable.
inline void check_graph(const FactorGraph& graph, const Values& values) {
  std::map<VariableKey, int> touched;
  for (const auto& f : graph.factors) {
    for (const auto& k : factor_keys(f)) {
      if (!values.count(k)) throw std::out_of_range("no value for variable " + k.str());
      ++touched[k];
    }
  }
  for (const auto& [k, v] : values) {
    if (!touched.count(k)) throw GaugeError(k.str());
  }
}

inline Values retract(const Values& values, const LinearSystem& sys, const VecX& delta) {
  Values out = values;
  for (std::size_t i = 0; i < sys.ordering.size(); ++i) {
    auto& pose = out.at(sys.ordering[i]);
    pose = oplus(pose, Twist::from_vector(delta.segment<6>(static_cast<Eigen::Index>(6 * i))));
  }
  return out;
}

/// Levenberg-Marquardt on the manifold: solve (H + lambda diag(H)) d = -g
/// with H = J'J, g = J'r, retract with oplus, accept only cost decreases.
inline OptimizeResult optimize(const FactorGraph& graph, const Values& init, const LMParams& params = {}) {
  check_graph(graph, init);
  OptimizeResult out{init, {}};
  double cost = graph_cost(graph, init);
  if (!std::isfinite(cost)) throw DivergenceError("non-finite initial cost");
  out.stats.initial_cost = cost;
  out.stats.final_cost = cost;
  if (graph.empty()) {
    out.stats.converged = true;
    return out;
  }

  double lambda = params.lambda_init;
  for (int iter = 0; iter < params.max_iterations; ++iter) {
    if (cost <= params.absolute_tolerance) {
      out.stats.converged = true;
      break;
    }
    const LinearSystem sys = linearize(graph, out.values);
    if (!sys.r.allFinite()) throw DivergenceError("non-finite residual");
    const Eigen::SparseMatrix<double> H = (sys.J.transpose() * sys.J).pruned();
    const VecX g = sys.J.transpose() * sys.r;
    VecX diag = H.diagonal();
    for (Eigen::Index i = 0; i < diag.size(); ++i) diag[i] = std::max(diag[i], 1e-12);

    out.stats.iterations = iter + 1;
    bool accepted = false;
    double rel = 0.0;
    while (lambda <= params.lambda_max) {
      Eigen::SparseMatrix<double> A = H;
      for (Eigen::Index i = 0; i < diag.size(); ++i) A.coeffRef(i, i) += lambda * diag[i];
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
      if (solver.info() == Eigen::Success) {
        const VecX delta = solver.solve(-g);
        if (delta.allFinite()) {
          double trial_cost = std::numeric_limits<double>::infinity();
          Values trial;
          try {
            trial = retract(out.values, sys, delta);
            trial_cost = graph_cost(graph, trial);
          } catch (const std::domain_error&) {
            // step crossed a log singularity; treat as a rejected step
          }
          if (std::isfinite(trial_cost) && trial_cost < cost) {
            rel = (cost - trial_cost) / cost;
            out.values = std::move(trial);
            cost = trial_cost;
            out.stats.accepted_costs.push_back(cost);
            lambda = std::max(lambda / params.lambda_factor, 1e-12);
            accepted = true;
            break;
          }
        }
      }
      lambda *= params.lambda_factor;
    }
    if (!accepted || rel < params.cost_tolerance) {
      out.stats.converged = true;
      break;
    }
  }
  out.stats.final_cost = cost;
  return out;
}

}  // namespace patchtrack

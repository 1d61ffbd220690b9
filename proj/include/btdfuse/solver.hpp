#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "btdfuse/degradation.hpp"
#include "btdfuse/initialize.hpp"
#include "btdfuse/model.hpp"
#include "btdfuse/regularization.hpp"
#include "btdfuse/rng.hpp"
#include "btdfuse/tensor.hpp"

namespace btdfuse {

enum class Block { kA, kB, kC, kD, kAtilde, kBtilde };

inline std::string to_string(Block b) {
  switch (b) {
    case Block::kA: return "A";
    case Block::kB: return "B";
    case Block::kC: return "C";
    case Block::kD: return "D";
    case Block::kAtilde: return "Atilde";
    case Block::kBtilde: return "Btilde";
  }
  return "?";
}

enum class UpdateOrder { kPerTerm, kPerBlock };
enum class StepMode { kExactSigma, kUpperBound };
enum class StopReason { kMaxIter, kRelTol };

struct SolverConfig {
  int max_iter = 1000;
  double rel_tol = 1e-8;
  bool extrapolation = true;
  UpdateOrder update_order = UpdateOrder::kPerTerm;
  StepMode step_mode = StepMode::kUpperBound;
  RegConfig reg;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iter < 0) throw std::invalid_argument("SolverConfig: max_iter must be >= 0");
    if (rel_tol <= 0) throw std::invalid_argument("SolverConfig: rel_tol must be > 0");
    reg.validate();
  }
};

struct FitReport {
  int iterations = 0;
  double final_objective = 0.0;
  std::vector<double> objective_trace;  // length = iterations + 1
  double wall_seconds = 0.0;
  StopReason stop_reason = StopReason::kMaxIter;
  std::optional<double> final_nre;  // vs a reference SRI when one was supplied
};

// gamma' = (1 + sqrt(1 + 4 gamma^2)) / 2,  mu = (gamma - 1) / gamma'.
struct ExtrapolationStep {
  double gamma_next;
  double mu;
};

inline ExtrapolationStep extrapolation_next(double gamma) {
  if (gamma < 1.0) throw std::invalid_argument("extrapolation_next: gamma must be >= 1");
  const double gamma_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * gamma * gamma));
  return {gamma_next, (gamma - 1.0) / gamma_next};
}

// One engine covers the three problem shapes:
//  - coupled with known spatial operators (P1, P2, PM given),
//  - semi-blind (PM given; HSI-side spatial factors free per term),
//  - single-tensor fit (MSI term only, identity PM).
class CoupledSolver {
 public:
  CoupledSolver(const Tensor3& y_h, const Tensor3& y_m, const DegradationSet& deg,
                LmnModel model0, SolverConfig config)
      : y_h_(y_h), y_m_(y_m), p1_(deg.P1), p2_(deg.P2), pm_(deg.PM),
        model_(std::move(model0)), config_(std::move(config)) {
    blind_ = false;
    init_common();
  }

  CoupledSolver(const Tensor3& y_h, const Tensor3& y_m, const Matrix& pm,
                SemiBlindModel model0, SolverConfig config)
      : y_h_(y_h), y_m_(y_m), pm_(pm), model_(std::move(model0.base)),
        tilde_(std::move(model0.hsi_terms)), config_(std::move(config)) {
    blind_ = true;
    init_common();
  }

  CoupledSolver(const Tensor3& y, LmnModel model0, SolverConfig config)
      : y_m_(y), model_(std::move(model0)), config_(std::move(config)) {
    blind_ = false;
    init_common();
  }

  bool has_hsi() const { return y_h_.has_value(); }
  bool blind() const { return blind_; }
  int iteration() const { return iteration_; }
  const LmnModel& model() const { return model_; }
  const LmnModel& checked_model() const { return checked_; }
  const std::vector<SemiBlindTermFactors>& tilde() const { return tilde_; }
  SemiBlindModel semi_blind_model() const { return SemiBlindModel{model_, tilde_}; }

  // Residual tensors excluding term r, at the checked iterates.
  Tensor3 residual_h(int r) const {
    require_hsi();
    Tensor3 res = *y_h_ - sum_h_;
    return res + hc_[static_cast<std::size_t>(r)];
  }
  Tensor3 residual_m(int r) const {
    Tensor3 res = y_m_ - sum_m_;
    return res + mc_[static_cast<std::size_t>(r)];
  }

  // Objective at the plain iterates: the coupled data misfit plus the
  // smoothness, spectral-Tikhonov and core penalties.
  double true_objective() const {
    double f = 0.0;
    if (has_hsi()) {
      Tensor3 acc(y_h_->dim(0), y_h_->dim(1), y_h_->dim(2));
      for (int r = 0; r < model_.R(); ++r) acc = acc + contribution_h(model_, tilde_, r);
      f += 0.5 * squared_norm(*y_h_ - acc);
    }
    {
      Tensor3 acc(y_m_.dim(0), y_m_.dim(1), y_m_.dim(2));
      for (int r = 0; r < model_.R(); ++r) acc = acc + contribution_m(model_, r);
      f += 0.5 * squared_norm(y_m_ - acc);
    }
    const RegConfig& reg = config_.reg;
    for (const LmnTerm& t : model_.terms) {
      if (reg.lambda > 0)
        f += reg.lambda * (phi_p_eps(h1_ * t.A, reg.p, reg.epsilon) +
                           phi_p_eps(h2_ * t.B, reg.p, reg.epsilon) + (h3_ * t.C).squaredNorm());
      if (reg.eta > 0 && !t.core_frozen) f += 0.5 * reg.eta * squared_norm(t.core);
    }
    return f;
  }

  Matrix grad_A(int r) const {
    const LmnTerm& t = checked_.terms[static_cast<std::size_t>(r)];
    Matrix g = Matrix::Zero(t.A.rows(), t.A.cols());
    if (has_hsi() && !blind_) {
      const Matrix v1 = unfold(mode_product(mode_product(t.core, Matrix(*p2_ * t.B), 2), t.C, 3), 1);
      const Matrix yh1 = unfold(residual_h(r), 1);
      g.noalias() += p1_->transpose() * ((*p1_ * t.A) * v1 - yh1) * v1.transpose();
    }
    {
      const Matrix u1 = unfold(mode_product(mode_product(t.core, t.B, 2), apply_pm(t.C), 3), 1);
      const Matrix ym1 = unfold(residual_m(r), 1);
      g.noalias() += (t.A * u1 - ym1) * u1.transpose();
    }
    if (config_.reg.lambda > 0) {
      const Matrix ha = h1_ * t.A;
      const Matrix w = majorizer_weights(ha, config_.reg.p, config_.reg.epsilon);
      g.noalias() += config_.reg.lambda * smoothness_gradient(ha, w, h1_);
    }
    return g;
  }

  Matrix grad_B(int r) const {
    const LmnTerm& t = checked_.terms[static_cast<std::size_t>(r)];
    Matrix g = Matrix::Zero(t.B.rows(), t.B.cols());
    if (has_hsi() && !blind_) {
      const Matrix v2 = unfold(mode_product(mode_product(t.core, Matrix(*p1_ * t.A), 1), t.C, 3), 2);
      const Matrix yh2 = unfold(residual_h(r), 2);
      g.noalias() += p2_->transpose() * ((*p2_ * t.B) * v2 - yh2) * v2.transpose();
    }
    {
      const Matrix u2 = unfold(mode_product(mode_product(t.core, t.A, 1), apply_pm(t.C), 3), 2);
      const Matrix ym2 = unfold(residual_m(r), 2);
      g.noalias() += (t.B * u2 - ym2) * u2.transpose();
    }
    if (config_.reg.lambda > 0) {
      const Matrix hb = h2_ * t.B;
      const Matrix w = majorizer_weights(hb, config_.reg.p, config_.reg.epsilon);
      g.noalias() += config_.reg.lambda * smoothness_gradient(hb, w, h2_);
    }
    return g;
  }

  Matrix grad_C(int r) const {
    const LmnTerm& t = checked_.terms[static_cast<std::size_t>(r)];
    Matrix g = Matrix::Zero(t.C.rows(), t.C.cols());
    {
      const Matrix v3 = unfold(mode_product(mode_product(t.core, t.A, 1), t.B, 2), 3);
      const Matrix ym3 = unfold(residual_m(r), 3);
      if (pm_) {
        g.noalias() += pm_->transpose() * ((*pm_ * t.C) * v3 - ym3) * v3.transpose();
      } else {
        g.noalias() += (t.C * v3 - ym3) * v3.transpose();
      }
    }
    if (has_hsi()) {
      const Matrix u3 = unfold(hsi_spatial_core(r), 3);
      const Matrix yh3 = unfold(residual_h(r), 3);
      g.noalias() += (t.C * u3 - yh3) * u3.transpose();
    }
    if (config_.reg.lambda > 0) g.noalias() += 2.0 * config_.reg.lambda * (h3t_h3_ * t.C);
    return g;
  }

  Tensor3 grad_D(int r) const {
    const LmnTerm& t = checked_.terms[static_cast<std::size_t>(r)];
    const Matrix pmc = apply_pm(t.C);
    Tensor3 g(t.L(), t.M(), t.N());
    {
      Tensor3 em = mode_product(mode_product(mode_product(t.core, t.A, 1), t.B, 2), pmc, 3) -
                   residual_m(r);
      Tensor3 gm = mode_product(mode_product(mode_product(em, Matrix(t.A.transpose()), 1),
                                             Matrix(t.B.transpose()), 2),
                                Matrix(pmc.transpose()), 3);
      g = g + gm;
    }
    if (has_hsi()) {
      const Matrix a_h = blind_ ? tilde_checked_[static_cast<std::size_t>(r)].Atilde
                                : Matrix(*p1_ * t.A);
      const Matrix b_h = blind_ ? tilde_checked_[static_cast<std::size_t>(r)].Btilde
                                : Matrix(*p2_ * t.B);
      Tensor3 eh = mode_product(mode_product(mode_product(t.core, a_h, 1), b_h, 2), t.C, 3) -
                   residual_h(r);
      Tensor3 gh = mode_product(mode_product(mode_product(eh, Matrix(a_h.transpose()), 1),
                                             Matrix(b_h.transpose()), 2),
                                Matrix(t.C.transpose()), 3);
      g = g + gh;
    }
    if (config_.reg.eta > 0) g = g + config_.reg.eta * t.core;
    return g;
  }

  Matrix grad_Atilde(int r) const {
    require_blind();
    const LmnTerm& t = checked_.terms[static_cast<std::size_t>(r)];
    const SemiBlindTermFactors& tf = tilde_checked_[static_cast<std::size_t>(r)];
    const Matrix v1 = unfold(mode_product(mode_product(t.core, tf.Btilde, 2), t.C, 3), 1);
    const Matrix yh1 = unfold(residual_h(r), 1);
    return (tf.Atilde * v1 - yh1) * v1.transpose();
  }

  Matrix grad_Btilde(int r) const {
    require_blind();
    const LmnTerm& t = checked_.terms[static_cast<std::size_t>(r)];
    const SemiBlindTermFactors& tf = tilde_checked_[static_cast<std::size_t>(r)];
    const Matrix v2 = unfold(mode_product(mode_product(t.core, tf.Atilde, 1), t.C, 3), 2);
    const Matrix yh2 = unfold(residual_h(r), 2);
    return (tf.Btilde * v2 - yh2) * v2.transpose();
  }

  // Upper bound on the block smoothness constant at the checked iterates.
  double lipschitz(Block block, int r) const {
    const LmnTerm& t = checked_.terms[static_cast<std::size_t>(r)];
    const RegConfig& reg = config_.reg;
    switch (block) {
      case Block::kA: {
        double l = 0.0;
        if (has_hsi() && !blind_) {
          const Matrix v1 = unfold(mode_product(mode_product(t.core, Matrix(*p2_ * t.B), 2), t.C, 3), 1);
          l += s_p1_sq_ * gram_sigma_max(v1);
        }
        const Matrix u1 = unfold(mode_product(mode_product(t.core, t.B, 2), apply_pm(t.C), 3), 1);
        l += gram_sigma_max(u1);
        l += tv_curvature(h1_, sigma_h1_, h1_ * t.A);
        return l;
      }
      case Block::kB: {
        double l = 0.0;
        if (has_hsi() && !blind_) {
          const Matrix v2 = unfold(mode_product(mode_product(t.core, Matrix(*p1_ * t.A), 1), t.C, 3), 2);
          l += s_p2_sq_ * gram_sigma_max(v2);
        }
        const Matrix u2 = unfold(mode_product(mode_product(t.core, t.A, 1), apply_pm(t.C), 3), 2);
        l += gram_sigma_max(u2);
        l += tv_curvature(h2_, sigma_h2_, h2_ * t.B);
        return l;
      }
      case Block::kC: {
        const Matrix v3 = unfold(mode_product(mode_product(t.core, t.A, 1), t.B, 2), 3);
        double l = s_pm_sq_ * gram_sigma_max(v3);
        if (has_hsi()) l += gram_sigma_max(unfold(hsi_spatial_core(r), 3));
        l += 2.0 * reg.lambda * s_h3_sq_;
        return l;
      }
      case Block::kD: {
        const double sa = sigma_max_or_zero(t.A), sb = sigma_max_or_zero(t.B);
        const double spc = sigma_max_or_zero(apply_pm(t.C));
        double l = spc * spc * sa * sa * sb * sb;
        if (has_hsi()) {
          const Matrix a_h = blind_ ? tilde_checked_[static_cast<std::size_t>(r)].Atilde
                                    : Matrix(*p1_ * t.A);
          const Matrix b_h = blind_ ? tilde_checked_[static_cast<std::size_t>(r)].Btilde
                                    : Matrix(*p2_ * t.B);
          const double sc = sigma_max_or_zero(t.C);
          const double sah = sigma_max_or_zero(a_h), sbh = sigma_max_or_zero(b_h);
          l += sc * sc * sah * sah * sbh * sbh;
        }
        return l + reg.eta;
      }
      case Block::kAtilde: {
        require_blind();
        const SemiBlindTermFactors& tf = tilde_checked_[static_cast<std::size_t>(r)];
        return gram_sigma_max(unfold(mode_product(mode_product(t.core, tf.Btilde, 2), t.C, 3), 1));
      }
      case Block::kBtilde: {
        require_blind();
        const SemiBlindTermFactors& tf = tilde_checked_[static_cast<std::size_t>(r)];
        return gram_sigma_max(unfold(mode_product(mode_product(t.core, tf.Atilde, 1), t.C, 3), 2));
      }
    }
    throw std::logic_error("lipschitz: unreachable");
  }

  // One extrapolated gradient step on block (b, r). Frozen cores and
  // zero-curvature blocks are skipped.
  void update_block(Block block, int r) {
    if (block == Block::kD && model_.terms[static_cast<std::size_t>(r)].core_frozen) return;
    const double lip = lipschitz(block, r);
    if (lip <= 0.0) return;
    const double alpha = 1.0 / lip;
    switch (block) {
      case Block::kA:
        step_matrix(model_.terms[static_cast<std::size_t>(r)].A,
                    checked_.terms[static_cast<std::size_t>(r)].A, grad_A(r), alpha, block, r);
        break;
      case Block::kB:
        step_matrix(model_.terms[static_cast<std::size_t>(r)].B,
                    checked_.terms[static_cast<std::size_t>(r)].B, grad_B(r), alpha, block, r);
        break;
      case Block::kC:
        step_matrix(model_.terms[static_cast<std::size_t>(r)].C,
                    checked_.terms[static_cast<std::size_t>(r)].C, grad_C(r), alpha, block, r);
        break;
      case Block::kD:
        step_core(model_.terms[static_cast<std::size_t>(r)].core,
                  checked_.terms[static_cast<std::size_t>(r)].core, grad_D(r), alpha, r);
        break;
      case Block::kAtilde:
        step_matrix(tilde_[static_cast<std::size_t>(r)].Atilde,
                    tilde_checked_[static_cast<std::size_t>(r)].Atilde, grad_Atilde(r), alpha,
                    block, r);
        break;
      case Block::kBtilde:
        step_matrix(tilde_[static_cast<std::size_t>(r)].Btilde,
                    tilde_checked_[static_cast<std::size_t>(r)].Btilde, grad_Btilde(r), alpha,
                    block, r);
        break;
    }
    refresh_contribution(r);
  }

  // One outer iteration over all blocks and terms.
  void outer_iteration() {
    const std::vector<Block> blocks = block_sequence();
    if (config_.update_order == UpdateOrder::kPerTerm) {
      for (int r = 0; r < model_.R(); ++r)
        for (Block b : blocks) update_block(b, r);
    } else {
      // Every r reads the pre-block snapshot: contributions are refreshed
      // only after a whole block finishes.
      for (Block b : blocks) {
        for (int r = 0; r < model_.R(); ++r) update_block_snapshot(b, r);
        for (int r = 0; r < model_.R(); ++r) refresh_contribution(r);
      }
    }
    ++iteration_;
  }

  // Clears the momentum state: checked copies snap back to the plain
  // iterates and every gamma sequence restarts at 1.
  void restart_momentum() {
    checked_ = model_;
    tilde_checked_ = tilde_;
    for (auto& g : gamma_) g = {1, 1, 1, 1, 1, 1};
    for (int r = 0; r < model_.R(); ++r) {
      if (has_hsi()) hc_[static_cast<std::size_t>(r)] = contribution_h(checked_, tilde_checked_, r);
      mc_[static_cast<std::size_t>(r)] = contribution_m(checked_, r);
    }
    rebuild_sums();
  }

  FitReport run() {
    const auto start = std::chrono::steady_clock::now();
    FitReport report;
    report.objective_trace.push_back(true_objective());
    report.stop_reason = StopReason::kMaxIter;
    for (int t = 0; t < config_.max_iter; ++t) {
      outer_iteration();
      const double obj = true_objective();
      if (!std::isfinite(obj))
        throw std::runtime_error("fit diverged: objective not finite at iteration " +
                                 std::to_string(iteration_));
      const double prev = report.objective_trace.back();
      // Adaptive restart: predefined momentum can overshoot on this
      // nonconvex landscape, so an objective increase resets it.
      if (config_.extrapolation && obj > prev) restart_momentum();
      report.objective_trace.push_back(obj);
      const double rel = std::abs(obj - prev) / std::max(std::abs(prev), 1e-300);
      if (rel < config_.rel_tol) {
        report.stop_reason = StopReason::kRelTol;
        break;
      }
    }
    report.iterations = iteration_;
    report.final_objective = report.objective_trace.back();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
  }

 private:
  void init_common() {
    config_.validate();
    model_.validate();
    if (blind_) {
      SemiBlindModel tmp{model_, tilde_};
      tmp.validate();
      if (!y_h_) throw std::invalid_argument("CoupledSolver: blind mode requires an HSI");
      for (const auto& tf : tilde_)
        if (tf.Atilde.rows() != y_h_->dim(0) || tf.Btilde.rows() != y_h_->dim(1))
          throw std::invalid_argument("CoupledSolver: tilde factor rows do not match HSI dims");
    }
    check_data_shapes();
    h1_ = build_H1(model_.dims[0]);
    h2_ = build_H2(model_.dims[1]);
    h3_ = build_H3(model_.dims[2]);
    h3t_h3_ = h3_.transpose() * h3_;
    sigma_h1_ = sigma_max(h1_);
    sigma_h2_ = sigma_max(h2_);
    s_h3_sq_ = sigma_max(h3_) * sigma_max(h3_);
    s_p1_sq_ = p1_ ? sigma_max(*p1_) * sigma_max(*p1_) : 1.0;
    s_p2_sq_ = p2_ ? sigma_max(*p2_) * sigma_max(*p2_) : 1.0;
    s_pm_sq_ = pm_ ? sigma_max(*pm_) * sigma_max(*pm_) : 1.0;
    checked_ = model_;
    tilde_checked_ = tilde_;
    gamma_.assign(static_cast<std::size_t>(model_.R()), {1, 1, 1, 1, 1, 1});
    hc_.clear();
    mc_.clear();
    for (int r = 0; r < model_.R(); ++r) {
      if (has_hsi()) hc_.push_back(contribution_h(checked_, tilde_checked_, r));
      mc_.push_back(contribution_m(checked_, r));
    }
    rebuild_sums();
  }

  void check_data_shapes() const {
    if (y_m_.dim(0) != model_.dims[0] || y_m_.dim(1) != model_.dims[1])
      throw std::invalid_argument("CoupledSolver: MSI spatial dims do not match model");
    if (pm_) {
      if (pm_->cols() != model_.dims[2] || pm_->rows() != y_m_.dim(2))
        throw std::invalid_argument("CoupledSolver: PM shape inconsistent with data");
    } else if (y_m_.dim(2) != model_.dims[2]) {
      throw std::invalid_argument("CoupledSolver: MSI band count does not match model");
    }
    if (y_h_) {
      if (y_h_->dim(2) != model_.dims[2])
        throw std::invalid_argument("CoupledSolver: HSI band count does not match model");
      if (!blind_) {
        if (!p1_ || !p2_) throw std::invalid_argument("CoupledSolver: missing P1/P2");
        if (p1_->rows() != y_h_->dim(0) || p1_->cols() != model_.dims[0] ||
            p2_->rows() != y_h_->dim(1) || p2_->cols() != model_.dims[1])
          throw std::invalid_argument("CoupledSolver: P1/P2 shapes inconsistent with data");
      }
    }
  }

  std::vector<Block> block_sequence() const {
    if (blind_)
      return {Block::kAtilde, Block::kA, Block::kBtilde, Block::kB, Block::kC, Block::kD};
    return {Block::kA, Block::kB, Block::kC, Block::kD};
  }

  Matrix apply_pm(const Matrix& c) const { return pm_ ? Matrix(*pm_ * c) : c; }

  // D x1 (HSI-side A) x2 (HSI-side B), at the checked iterates.
  Tensor3 hsi_spatial_core(int r) const {
    const LmnTerm& t = checked_.terms[static_cast<std::size_t>(r)];
    if (blind_) {
      const SemiBlindTermFactors& tf = tilde_checked_[static_cast<std::size_t>(r)];
      return mode_product(mode_product(t.core, tf.Atilde, 1), tf.Btilde, 2);
    }
    return mode_product(mode_product(t.core, Matrix(p1_.value() * t.A), 1),
                        Matrix(p2_.value() * t.B), 2);
  }

  static Tensor3 contribution_m_impl(const LmnTerm& t, const std::optional<Matrix>& pm) {
    const Matrix c = pm ? Matrix(*pm * t.C) : t.C;
    return mode_product(mode_product(mode_product(t.core, t.A, 1), t.B, 2), c, 3);
  }

  Tensor3 contribution_m(const LmnModel& m, int r) const {
    return contribution_m_impl(m.terms[static_cast<std::size_t>(r)], pm_);
  }

  Tensor3 contribution_h(const LmnModel& m, const std::vector<SemiBlindTermFactors>& tf,
                         int r) const {
    const LmnTerm& t = m.terms[static_cast<std::size_t>(r)];
    if (blind_) {
      const SemiBlindTermFactors& f = tf[static_cast<std::size_t>(r)];
      return mode_product(mode_product(mode_product(t.core, f.Atilde, 1), f.Btilde, 2), t.C, 3);
    }
    return mode_product(
        mode_product(mode_product(t.core, Matrix(p1_.value() * t.A), 1), Matrix(p2_.value() * t.B), 2),
        t.C, 3);
  }

  void refresh_contribution(int r) {
    if (has_hsi()) {
      sum_h_ = sum_h_ - hc_[static_cast<std::size_t>(r)];
      hc_[static_cast<std::size_t>(r)] = contribution_h(checked_, tilde_checked_, r);
      sum_h_ = sum_h_ + hc_[static_cast<std::size_t>(r)];
    }
    sum_m_ = sum_m_ - mc_[static_cast<std::size_t>(r)];
    mc_[static_cast<std::size_t>(r)] = contribution_m(checked_, r);
    sum_m_ = sum_m_ + mc_[static_cast<std::size_t>(r)];
  }

  void rebuild_sums() {
    if (has_hsi()) {
      sum_h_ = Tensor3(y_h_->dim(0), y_h_->dim(1), y_h_->dim(2));
      for (const Tensor3& c : hc_) sum_h_ = sum_h_ + c;
    }
    sum_m_ = Tensor3(y_m_.dim(0), y_m_.dim(1), y_m_.dim(2));
    for (const Tensor3& c : mc_) sum_m_ = sum_m_ + c;
  }

  // update_block without the trailing contribution refresh (snapshot mode).
  void update_block_snapshot(Block block, int r) {
    if (block == Block::kD && model_.terms[static_cast<std::size_t>(r)].core_frozen) return;
    const double lip = lipschitz(block, r);
    if (lip <= 0.0) return;
    const double alpha = 1.0 / lip;
    switch (block) {
      case Block::kA:
        step_matrix(model_.terms[static_cast<std::size_t>(r)].A,
                    checked_.terms[static_cast<std::size_t>(r)].A, grad_A(r), alpha, block, r);
        break;
      case Block::kB:
        step_matrix(model_.terms[static_cast<std::size_t>(r)].B,
                    checked_.terms[static_cast<std::size_t>(r)].B, grad_B(r), alpha, block, r);
        break;
      case Block::kC:
        step_matrix(model_.terms[static_cast<std::size_t>(r)].C,
                    checked_.terms[static_cast<std::size_t>(r)].C, grad_C(r), alpha, block, r);
        break;
      case Block::kD:
        step_core(model_.terms[static_cast<std::size_t>(r)].core,
                  checked_.terms[static_cast<std::size_t>(r)].core, grad_D(r), alpha, r);
        break;
      case Block::kAtilde:
        step_matrix(tilde_[static_cast<std::size_t>(r)].Atilde,
                    tilde_checked_[static_cast<std::size_t>(r)].Atilde, grad_Atilde(r), alpha,
                    block, r);
        break;
      case Block::kBtilde:
        step_matrix(tilde_[static_cast<std::size_t>(r)].Btilde,
                    tilde_checked_[static_cast<std::size_t>(r)].Btilde, grad_Btilde(r), alpha,
                    block, r);
        break;
    }
  }

  void step_matrix(Matrix& plain, Matrix& checked, const Matrix& grad, double alpha,
                   Block block, int r) {
    const Matrix x_old = plain;
    const Matrix x_new = checked - alpha * grad;
    if (!x_new.allFinite())
      throw std::runtime_error("fit diverged: block " + to_string(block) + ", term " +
                               std::to_string(r) + ", iteration " + std::to_string(iteration_));
    plain = x_new;
    if (config_.extrapolation) {
      double& gamma = gamma_[static_cast<std::size_t>(r)][block_index(block)];
      const ExtrapolationStep e = extrapolation_next(gamma);
      checked = x_new + e.mu * (x_new - x_old);
      gamma = e.gamma_next;
    } else {
      checked = x_new;
    }
  }

  void step_core(Tensor3& plain, Tensor3& checked, const Tensor3& grad, double alpha, int r) {
    const Tensor3 x_old = plain;
    Tensor3 x_new = checked - alpha * grad;
    if (!x_new.all_finite())
      throw std::runtime_error("fit diverged: block D, term " + std::to_string(r) +
                               ", iteration " + std::to_string(iteration_));
    plain = x_new;
    if (config_.extrapolation) {
      double& gamma = gamma_[static_cast<std::size_t>(r)][block_index(Block::kD)];
      const ExtrapolationStep e = extrapolation_next(gamma);
      checked = x_new + e.mu * (x_new - x_old);
      gamma = e.gamma_next;
    } else {
      checked = x_new;
    }
  }

  static std::size_t block_index(Block b) { return static_cast<std::size_t>(b); }

  double tv_curvature(const Matrix& h, double sigma_h, const Matrix& hx) const {
    if (config_.reg.lambda <= 0) return 0.0;
    const Matrix w = majorizer_weights(hx, config_.reg.p, config_.reg.epsilon);
    const double curv = config_.step_mode == StepMode::kExactSigma
                            ? smoothness_curvature_exact(w, h)
                            : smoothness_curvature_bound(w, sigma_h);
    return config_.reg.lambda * curv;
  }

  static double gram_sigma_max(const Matrix& v) {
    if (v.rows() == 0 || v.cols() == 0) return 0.0;
    const Matrix gram = v * v.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
    return std::max(0.0, eig.eigenvalues().maxCoeff());
  }

  static double sigma_max_or_zero(const Matrix& m) {
    return (m.rows() == 0 || m.cols() == 0) ? 0.0 : sigma_max(m);
  }

  void require_hsi() const {
    if (!has_hsi()) throw std::logic_error("CoupledSolver: no HSI term in this problem");
  }
  void require_blind() const {
    if (!blind_) throw std::logic_error("CoupledSolver: not a semi-blind problem");
  }

  std::optional<Tensor3> y_h_;
  Tensor3 y_m_;
  std::optional<Matrix> p1_, p2_, pm_;
  LmnModel model_;
  std::vector<SemiBlindTermFactors> tilde_;
  SolverConfig config_;
  bool blind_ = false;

  LmnModel checked_;
  std::vector<SemiBlindTermFactors> tilde_checked_;
  std::vector<std::array<double, 6>> gamma_;
  std::vector<Tensor3> hc_, mc_;  // per-term contributions at checked iterates
  Tensor3 sum_h_, sum_m_;
  Matrix h1_, h2_, h3_, h3t_h3_;
  double sigma_h1_ = 0, sigma_h2_ = 0, s_h3_sq_ = 0;
  double s_p1_sq_ = 1, s_p2_sq_ = 1, s_pm_sq_ = 1;
  int iteration_ = 0;
};

inline void attach_nre(FitReport& report, const LmnModel& model, const Tensor3* reference) {
  if (!reference) return;
  const Tensor3 recon = reconstruct(model);
  report.final_nre = frobenius_norm(recon - *reference) / frobenius_norm(*reference);
}

// Coupled fit with known degradation operators.
inline std::pair<LmnModel, FitReport> fit(const Tensor3& y_h, const Tensor3& y_m,
                                          const DegradationSet& deg, const LmnModel& model0,
                                          const SolverConfig& config,
                                          const Tensor3* reference_sri = nullptr) {
  CoupledSolver solver(y_h, y_m, deg, model0, config);
  FitReport report = solver.run();
  attach_nre(report, solver.model(), reference_sri);
  return {solver.model(), report};
}

// Semi-blind coupled fit: spatial operators unknown, PM known.
inline std::pair<SemiBlindModel, FitReport> fit_blind(const Tensor3& y_h, const Tensor3& y_m,
                                                      const Matrix& pm,
                                                      const SemiBlindModel& model0,
                                                      const SolverConfig& config,
                                                      const Tensor3* reference_sri = nullptr) {
  CoupledSolver solver(y_h, y_m, pm, model0, config);
  FitReport report = solver.run();
  attach_nre(report, solver.model(), reference_sri);
  return {solver.semi_blind_model(), report};
}

// Single-tensor fit: minimizes 0.5 ||Y - reconstruct(theta)||^2 (+ optional
// regularizers) with the same block machinery.
inline std::pair<LmnModel, FitReport> fit_single(const Tensor3& y, const LmnModel& model0,
                                                 const SolverConfig& config) {
  CoupledSolver solver(y, model0, config);
  FitReport report = solver.run();
  attach_nre(report, solver.model(), &y);
  return {solver.model(), report};
}

}  // namespace btdfuse

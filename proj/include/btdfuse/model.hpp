#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "btdfuse/rng.hpp"
#include "btdfuse/tensor.hpp"

namespace btdfuse {

// One rank-(L,M,N) term: T = D x1 A x2 B x3 C.
struct LmnTerm {
  Tensor3 core;       // L x M x N
  Matrix A;           // I x L
  Matrix B;           // J x M
  Matrix C;           // K x N
  bool core_frozen = false;

  int L() const { return core.dim(0); }
  int M() const { return core.dim(1); }
  int N() const { return core.dim(2); }
};

// Sum of R terms sharing ambient dims (I, J, K).
struct LmnModel {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<LmnTerm> terms;

  int R() const { return static_cast<int>(terms.size()); }

  void validate() const {
    if (terms.empty()) throw std::invalid_argument("LmnModel: R must be >= 1");
    for (const LmnTerm& t : terms) {
      if (t.A.rows() != dims[0] || t.B.rows() != dims[1] || t.C.rows() != dims[2])
        throw std::invalid_argument("LmnModel: factor rows do not match ambient dims");
      if (t.A.cols() != t.L() || t.B.cols() != t.M() || t.C.cols() != t.N())
        throw std::invalid_argument("LmnModel: factor cols do not match core dims");
      if (t.L() > dims[0] || t.M() > dims[1] || t.N() > dims[2])
        throw std::invalid_argument("LmnModel: term rank exceeds ambient dim");
    }
  }
};

// Semi-blind parameter set: the base model plus per-term HSI-side spatial
// factors standing in for P1*A_r and P2*B_r.
struct SemiBlindTermFactors {
  Matrix Atilde;  // I_H x L
  Matrix Btilde;  // J_H x M
};

struct SemiBlindModel {
  LmnModel base;
  std::vector<SemiBlindTermFactors> hsi_terms;

  void validate() const {
    base.validate();
    if (hsi_terms.size() != base.terms.size())
      throw std::invalid_argument("SemiBlindModel: hsi_terms count != R");
    for (std::size_t r = 0; r < hsi_terms.size(); ++r) {
      if (hsi_terms[r].Atilde.cols() != base.terms[r].L() ||
          hsi_terms[r].Btilde.cols() != base.terms[r].M())
        throw std::invalid_argument("SemiBlindModel: hsi factor ranks do not match base term");
    }
  }
};

inline Tensor3 reconstruct_term(const LmnModel& model, int r) {
  if (r < 0 || r >= model.R())
    throw std::out_of_range("reconstruct_term: term index out of range");
  const LmnTerm& t = model.terms[static_cast<std::size_t>(r)];
  Tensor3 x = mode_product(t.core, t.A, 1);
  x = mode_product(x, t.B, 2);
  return mode_product(x, t.C, 3);
}

inline Tensor3 reconstruct(const LmnModel& model) {
  model.validate();
  Tensor3 out(model.dims[0], model.dims[1], model.dims[2]);
  for (int r = 0; r < model.R(); ++r) out = out + reconstruct_term(model, r);
  return out;
}

enum class ModelKind { kCpd, kTucker, kLl1, kLmn };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kCpd: return "cpd";
    case ModelKind::kTucker: return "tucker";
    case ModelKind::kLl1: return "ll1";
    case ModelKind::kLmn: return "lmn";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "cpd") return ModelKind::kCpd;
  if (s == "tucker") return ModelKind::kTucker;
  if (s == "ll1") return ModelKind::kLl1;
  if (s == "lmn") return ModelKind::kLmn;
  throw std::invalid_argument("unknown model kind: " + s);
}

// Per-term (L, M, N) rank lists for the classical shapes.
inline std::vector<std::array<int, 3>> cpd_ranks(int f) {
  if (f < 1) throw std::invalid_argument("cpd_ranks: F must be >= 1");
  return std::vector<std::array<int, 3>>(static_cast<std::size_t>(f), {1, 1, 1});
}

inline std::vector<std::array<int, 3>> tucker_ranks(int l, int m, int n) {
  return {{l, m, n}};
}

inline std::vector<std::array<int, 3>> ll1_ranks(const std::vector<int>& ls) {
  std::vector<std::array<int, 3>> out;
  out.reserve(ls.size());
  for (int l : ls) out.push_back({l, l, 1});
  return out;
}

inline std::vector<std::array<int, 3>> uniform_ranks(int r, int l, int m, int n) {
  if (r < 1) throw std::invalid_argument("uniform_ranks: R must be >= 1");
  return std::vector<std::array<int, 3>>(static_cast<std::size_t>(r), {l, m, n});
}

inline void check_rank_spec(ModelKind kind, const std::array<int, 3>& dims,
                            const std::vector<std::array<int, 3>>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("rank spec: at least one term required");
  if (kind == ModelKind::kTucker && ranks.size() != 1)
    throw std::invalid_argument("rank spec: Tucker uses exactly one term");
  for (const auto& [l, m, n] : ranks) {
    if (l < 1 || m < 1 || n < 1) throw std::invalid_argument("rank spec: ranks must be >= 1");
    if (l > dims[0] || m > dims[1] || n > dims[2])
      throw std::invalid_argument("rank spec: rank exceeds tensor dim");
    if (kind == ModelKind::kCpd && (l != 1 || m != 1 || n != 1))
      throw std::invalid_argument("rank spec: CPD terms must be rank (1,1,1)");
    if (kind == ModelKind::kLl1 && (l != m || n != 1))
      throw std::invalid_argument("rank spec: LL1 terms must be rank (L,L,1)");
  }
}

// Gaussian-initialized model realizing the requested classical shape.
// CPD cores are pinned to the scalar 1 and LL1 cores to the LxLx1 identity;
// both stay frozen so the shape survives fitting.
inline LmnModel make_special_shape(ModelKind kind, const std::array<int, 3>& dims,
                                   const std::vector<std::array<int, 3>>& ranks,
                                   std::uint64_t seed) {
  check_rank_spec(kind, dims, ranks);
  LmnModel model;
  model.dims = dims;
  for (std::size_t r = 0; r < ranks.size(); ++r) {
    const auto [l, m, n] = ranks[r];
    LmnTerm term;
    term.A.resize(dims[0], l);
    term.B.resize(dims[1], m);
    term.C.resize(dims[2], n);
    rng::fill_normal(term.A.data(), term.A.size(), seed, rng::stream_id("factor_A", r));
    rng::fill_normal(term.B.data(), term.B.size(), seed, rng::stream_id("factor_B", r));
    rng::fill_normal(term.C.data(), term.C.size(), seed, rng::stream_id("factor_C", r));
    term.core = Tensor3(l, m, n);
    switch (kind) {
      case ModelKind::kCpd:
        term.core(0, 0, 0) = 1.0;
        term.core_frozen = true;
        break;
      case ModelKind::kLl1:
        for (int d = 0; d < l; ++d) term.core(d, d, 0) = 1.0;
        term.core_frozen = true;
        break;
      case ModelKind::kTucker:
      case ModelKind::kLmn:
        rng::fill_normal(term.core.data(), term.core.size(), seed,
                         rng::stream_id("factor_D", r));
        break;
    }
    model.terms.push_back(std::move(term));
  }
  model.validate();
  return model;
}

// Free-parameter counts behind the budget-matched model comparisons.
inline long long count_params(ModelKind kind, const std::array<int, 3>& dims,
                              const std::vector<std::array<int, 3>>& ranks) {
  check_rank_spec(kind, dims, ranks);
  const long long I = dims[0], J = dims[1], K = dims[2];
  long long total = 0;
  switch (kind) {
    case ModelKind::kCpd:
      total = static_cast<long long>(ranks.size()) * (I + J + K);
      break;
    case ModelKind::kTucker: {
      const auto [l, m, n] = ranks[0];
      total = I * l + J * m + K * n + static_cast<long long>(l) * m * n;
      break;
    }
    case ModelKind::kLl1:
      for (const auto& [l, m, n] : ranks) total += (I + J) * l;
      total += K * static_cast<long long>(ranks.size());
      break;
    case ModelKind::kLmn:
      for (const auto& [l, m, n] : ranks)
        total += I * l + J * m + K * n + static_cast<long long>(l) * m * n;
      break;
  }
  return total;
}

struct ConditionCheck {
  std::string name;  // "lhs >= rhs" in words
  long long lhs = 0;
  long long rhs = 0;
  bool passed = false;
};

struct RecoverabilityReport {
  bool blind = false;
  std::vector<ConditionCheck> checks;
  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const ConditionCheck& c) { return c.passed; });
  }
};

// Exact-recovery conditions for the coupled problem; the blind variant adds
// the spectral-oversampling and HSI-side width requirements.
inline RecoverabilityReport check_recoverability(
    const std::array<int, 3>& dims_sri, const std::array<int, 2>& dims_hsi, int k_m,
    const std::vector<std::array<int, 3>>& ranks, int r, bool blind) {
  if (r < 1 || static_cast<std::size_t>(r) != ranks.size())
    throw std::invalid_argument("check_recoverability: R must match rank list");
  for (const auto& rr : ranks)
    if (rr != ranks[0])
      throw std::invalid_argument("check_recoverability: ranks must be uniform across terms");
  const long long L = ranks[0][0], M = ranks[0][1], N = ranks[0][2];
  const long long I_M = dims_sri[0], J_M = dims_sri[1];
  const long long I_H = dims_hsi[0], J_H = dims_hsi[1];
  const long long ceil_lm = (L + M - 1) / M + (M + L - 1) / L;
  const long long n_floor = std::max<long long>(ceil_lm, 3);

  RecoverabilityReport report;
  report.blind = blind;
  auto add = [&report](std::string name, long long lhs, long long rhs) {
    report.checks.push_back({std::move(name), lhs, rhs, lhs >= rhs});
  };
  add("I_H*J_H >= L*M*R", I_H * J_H, L * M * r);
  add("I_M >= L*R", I_M, L * r);
  add("J_M >= M*R", J_M, M * r);
  add("L*M >= N", L * M, N);
  add("N >= max(ceil(L/M)+ceil(M/L), 3)", N, n_floor);
  if (blind) {
    add("K_M >= 2*N", k_m, 2 * N);
    add("I_H >= L*R", I_H, L * r);
    add("J_H >= M*R", J_H, M * r);
  }
  return report;
}

}  // namespace btdfuse

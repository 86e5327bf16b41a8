#include "jointlong/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "jointlong/optim.hpp"

namespace jointlong {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logit(double y) { return std::log(y) - std::log1p(-y); }

}  // namespace

// ---------------------------------------------------------------- arrow

ArrowMatrix ArrowMatrix::zeros(const LatentLayout& layout) {
  const auto nf = static_cast<Eigen::Index>(layout.n_fixed());
  const auto p = static_cast<Eigen::Index>(layout.p());
  ArrowMatrix m;
  m.fixed = Eigen::MatrixXd::Zero(nf, nf);
  m.cross.assign(layout.n_subjects, Eigen::MatrixXd::Zero(nf, p));
  m.blocks.assign(layout.n_subjects, Eigen::MatrixXd::Zero(p, p));
  return m;
}

Eigen::MatrixXd ArrowMatrix::dense() const {
  const auto nf = fixed.rows();
  const auto p = blocks.empty() ? Eigen::Index{0} : blocks.front().rows();
  const auto n = nf + p * static_cast<Eigen::Index>(blocks.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  out.topLeftCorner(nf, nf) = fixed;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto off = nf + p * static_cast<Eigen::Index>(i);
    out.block(0, off, nf, p) = cross[i];
    out.block(off, 0, p, nf) = cross[i].transpose();
    out.block(off, off, p, p) = blocks[i];
  }
  return out;
}

Eigen::VectorXd ArrowMatrix::multiply(const Eigen::VectorXd& x) const {
  const auto nf = fixed.rows();
  const auto p = blocks.empty() ? Eigen::Index{0} : blocks.front().rows();
  Eigen::VectorXd out(x.size());
  out.head(nf) = fixed * x.head(nf);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto off = nf + p * static_cast<Eigen::Index>(i);
    out.head(nf) += cross[i] * x.segment(off, p);
    out.segment(off, p) = cross[i].transpose() * x.head(nf) + blocks[i] * x.segment(off, p);
  }
  return out;
}

ArrowCholesky::ArrowCholesky(const ArrowMatrix& q) {
  nf_ = static_cast<std::size_t>(q.fixed.rows());
  p_ = q.blocks.empty() ? 0 : static_cast<std::size_t>(q.blocks.front().rows());
  block_llt_.reserve(q.blocks.size());
  cinv_bt_.reserve(q.blocks.size());
  Eigen::MatrixXd schur = q.fixed;
  log_det_ = 0.0;
  for (std::size_t i = 0; i < q.blocks.size(); ++i) {
    block_llt_.emplace_back(q.blocks[i]);
    const auto& llt = block_llt_.back();
    if (llt.info() != Eigen::Success) return;
    Eigen::MatrixXd l = llt.matrixL();
    log_det_ += 2.0 * l.diagonal().array().log().sum();
    cinv_bt_.push_back(llt.solve(q.cross[i].transpose()));
    schur.noalias() -= q.cross[i] * cinv_bt_.back();
  }
  schur_llt_.compute(schur);
  if (schur_llt_.info() != Eigen::Success) return;
  Eigen::MatrixXd ls = schur_llt_.matrixL();
  const double schur_log_det = 2.0 * ls.diagonal().array().log().sum();
  if (!std::isfinite(schur_log_det) || !std::isfinite(log_det_)) return;
  log_det_ += schur_log_det;
  ok_ = true;
}

Eigen::VectorXd ArrowCholesky::solve(const Eigen::VectorXd& rhs) const {
  const auto nf = static_cast<Eigen::Index>(nf_);
  const auto p = static_cast<Eigen::Index>(p_);
  Eigen::VectorXd out(rhs.size());
  // Fixed part: S x_f = r_f - sum_i B_i C_i^{-1} r_i.
  Eigen::VectorXd reduced = rhs.head(nf);
  std::vector<Eigen::VectorXd> cinv_r(block_llt_.size());
  for (std::size_t i = 0; i < block_llt_.size(); ++i) {
    const auto off = nf + p * static_cast<Eigen::Index>(i);
    cinv_r[i] = block_llt_[i].solve(rhs.segment(off, p));
    reduced.noalias() -= cinv_bt_[i].transpose() * rhs.segment(off, p);
  }
  out.head(nf) = schur_llt_.solve(reduced);
  for (std::size_t i = 0; i < block_llt_.size(); ++i) {
    const auto off = nf + p * static_cast<Eigen::Index>(i);
    out.segment(off, p) = cinv_r[i] - cinv_bt_[i] * out.head(nf);
  }
  return out;
}

Eigen::MatrixXd ArrowCholesky::fixed_covariance() const {
  const auto nf = static_cast<Eigen::Index>(nf_);
  return schur_llt_.solve(Eigen::MatrixXd::Identity(nf, nf));
}

Eigen::VectorXd ArrowCholesky::marginal_variances() const {
  const auto nf = static_cast<Eigen::Index>(nf_);
  const auto p = static_cast<Eigen::Index>(p_);
  Eigen::VectorXd var(nf + p * static_cast<Eigen::Index>(block_llt_.size()));
  Eigen::MatrixXd s_inv = fixed_covariance();
  var.head(nf) = s_inv.diagonal();
  for (std::size_t i = 0; i < block_llt_.size(); ++i) {
    const auto off = nf + p * static_cast<Eigen::Index>(i);
    // Cov(b_i) = C_i^{-1} + C_i^{-1} B_i^T S^{-1} B_i C_i^{-1}
    Eigen::MatrixXd c_inv = block_llt_[i].solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::MatrixXd cov = c_inv + cinv_bt_[i] * s_inv * cinv_bt_[i].transpose();
    var.segment(off, p) = cov.diagonal();
  }
  return var;
}

Eigen::VectorXd ArrowCholesky::sample(const Eigen::VectorXd& mean, RngStream& rng) const {
  const auto nf = static_cast<Eigen::Index>(nf_);
  const auto p = static_cast<Eigen::Index>(p_);
  Eigen::VectorXd x(mean.size());
  // Fixed effects from N(0, S^{-1}): solve L_S^T u = z.
  Eigen::VectorXd z = rng.normal_vector(nf);
  Eigen::VectorXd df = schur_llt_.matrixU().solve(z);
  x.head(nf) = mean.head(nf) + df;
  // b_i | beta ~ N(mode_i - C_i^{-1} B_i^T (beta - mode_beta), C_i^{-1}).
  for (std::size_t i = 0; i < block_llt_.size(); ++i) {
    const auto off = nf + p * static_cast<Eigen::Index>(i);
    Eigen::VectorXd zi = rng.normal_vector(p);
    Eigen::VectorXd dbi = block_llt_[i].matrixU().solve(zi);
    x.segment(off, p) = mean.segment(off, p) - cinv_bt_[i] * df + dbi;
  }
  return x;
}

// ---------------------------------------------------------------- model data

ModelData::ModelData(const ModelSpec& spec, const LongDataset& data)
    : spec_(spec), data_(&data), layout_(LatentLayout::from(spec, data.n_subjects())) {
  const auto nf = static_cast<Eigen::Index>(layout_.n_fixed());
  const auto kv = static_cast<Eigen::Index>(layout_.kv);
  const auto ky = static_cast<Eigen::Index>(layout_.ky);
  const auto qv = static_cast<Eigen::Index>(layout_.qv);
  const auto qy = static_cast<Eigen::Index>(layout_.qy);
  const auto width = nf + qv + qy;
  designs_.reserve(data.n_subjects());
  for (const auto& s : data.subjects) {
    SubjectDesign d;
    const auto n = static_cast<Eigen::Index>(s.n_cov());
    const auto m = static_cast<Eigen::Index>(s.n_out());
    d.cov_design = Eigen::MatrixXd::Zero(n, width);
    if (n > 0) {
      d.cov_design.block(0, 0, n, kv) = spec.cov_fixed.matrix(s.cov_times, s.covariates);
      d.cov_design.block(0, nf, n, qv) = spec.cov_random.matrix(s.cov_times, s.covariates);
    }
    d.cov_gram = d.cov_design.transpose() * d.cov_design;
    d.v = Eigen::Map<const Eigen::VectorXd>(s.cov_values.data(), n);
    d.out_base = Eigen::MatrixXd::Zero(m, width);
    d.out_copy = Eigen::MatrixXd::Zero(m, width);
    if (m > 0) {
      d.out_base.block(0, kv, m, ky) = spec.out_fixed.matrix(s.out_times, s.covariates);
      d.out_base.block(0, nf + qv, m, qy) = spec.out_random.matrix(s.out_times, s.covariates);
      if (spec.kind == ModelKind::JSM) {
        d.out_copy.block(0, 0, m, kv) = spec.cov_fixed.matrix(s.out_times, s.covariates);
        d.out_copy.block(0, nf, m, qv) = spec.cov_random.matrix(s.out_times, s.covariates);
      }
    }
    d.y = Eigen::Map<const Eigen::VectorXd>(s.out_values.data(), m);
    d.log_y.resize(m);
    d.log1m_y.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double y = d.y(k);
      d.log_y(k) = spec.outcome_family == OutcomeFamily::Beta ? std::log(y) : 0.0;
      d.log1m_y(k) = spec.outcome_family == OutcomeFamily::Beta ? std::log1p(-y) : 0.0;
    }
    designs_.push_back(std::move(d));
  }
}

HyperState::HyperState(const ModelSpec& spec, const HyperVector& h) : hyper(h) {
  Eigen::MatrixXd L = h.cholesky_factor(spec);
  const auto p = L.rows();
  Eigen::MatrixXd l_inv = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(p, p));
  d_inv = l_inv.transpose() * l_inv;
  log_det_d = 2.0 * h.d_chol_log_diag.sum();
  eps_precision = h.eps_precision();
  out_precision = h.out_precision();
  gamma = spec.kind == ModelKind::JSM ? h.gamma : 0.0;
  log_prior = hyper_log_prior(spec, h);
}

// ---------------------------------------------------------------- posterior

namespace {

// Shared kernel for value-only and derivative evaluation.
template <bool kDerivs>
double evaluate_posterior(const ModelData& md, const HyperState& hs, const Eigen::VectorXd& x, Curvature curvature,
                          double prior_jitter, LatentEval* out) {
  const auto& spec = md.spec();
  const auto& layout = md.layout();
  const auto nf = static_cast<Eigen::Index>(layout.n_fixed());
  const auto p = static_cast<Eigen::Index>(layout.p());
  const auto width = nf + p;
  const double tau = hs.eps_precision;
  const double half_log_tau = 0.5 * (std::log(tau) - kLog2Pi);
  const double beta_prec = spec.priors.beta_precision + prior_jitter;

  double value = hs.log_prior;
  if constexpr (kDerivs) {
    out->gradient = Eigen::VectorXd::Zero(x.size());
    out->neg_hessian = ArrowMatrix::zeros(layout);
  }

  // Fixed-effect prior.
  const auto beta = x.head(nf);
  value += 0.5 * static_cast<double>(nf) * (std::log(beta_prec) - kLog2Pi) - 0.5 * beta_prec * beta.squaredNorm();
  if constexpr (kDerivs) {
    out->gradient.head(nf) -= beta_prec * beta;
    out->neg_hessian.fixed.diagonal().array() += beta_prec;
  }

  Eigen::VectorXd local(width);
  Eigen::VectorXd grad_local(width);
  Eigen::MatrixXd hess_local(width, width);
  Eigen::MatrixXd w_out;
  const double b_norm_const = -0.5 * (static_cast<double>(p) * kLog2Pi + hs.log_det_d);

  for (std::size_t i = 0; i < md.subjects().size(); ++i) {
    const auto& d = md.subjects()[i];
    const auto off = static_cast<Eigen::Index>(layout.b_offset(i));
    local.head(nf) = beta;
    local.tail(p) = x.segment(off, p);
    if constexpr (kDerivs) {
      grad_local.setZero();
      hess_local.setZero();
    }

    // Covariate observations.
    if (d.v.size() > 0) {
      Eigen::VectorXd r = d.v - d.cov_design * local;
      value += static_cast<double>(d.v.size()) * half_log_tau - 0.5 * tau * r.squaredNorm();
      if constexpr (kDerivs) {
        grad_local.noalias() += tau * (d.cov_design.transpose() * r);
        hess_local.noalias() += tau * d.cov_gram;
      }
    }

    // Outcome observations.
    if (d.y.size() > 0) {
      if (hs.gamma != 0.0)
        w_out = d.out_base + hs.gamma * d.out_copy;
      else
        w_out = d.out_base;
      Eigen::VectorXd eta = w_out * local;
      Eigen::VectorXd d1, wts;
      if constexpr (kDerivs) {
        d1.resize(eta.size());
        wts.resize(eta.size());
      }
      for (Eigen::Index k = 0; k < eta.size(); ++k) {
        auto kern = outcome_kernel(spec.outcome_family, d.y(k), d.log_y(k), d.log1m_y(k), eta(k), hs.out_precision,
                                   kDerivs);
        if (!kern.ok || !std::isfinite(kern.logf)) {
          if constexpr (kDerivs) out->finite = false;
          return kNegInf;
        }
        value += kern.logf;
        if constexpr (kDerivs) {
          d1(k) = kern.d1;
          wts(k) = curvature == Curvature::Fisher ? kern.fisher : -kern.d2;
        }
      }
      if constexpr (kDerivs) {
        grad_local.noalias() += w_out.transpose() * d1;
        hess_local.noalias() += w_out.transpose() * wts.asDiagonal() * w_out;
      }
    }

    // Random-effect prior N(0, D).
    const auto b = x.segment(off, p);
    Eigen::VectorXd d_inv_b = hs.d_inv * b;
    value += b_norm_const - 0.5 * b.dot(d_inv_b);
    if (prior_jitter > 0.0) value -= 0.5 * prior_jitter * b.squaredNorm();

    if constexpr (kDerivs) {
      out->gradient.head(nf) += grad_local.head(nf);
      out->gradient.segment(off, p) = grad_local.tail(p) - d_inv_b - prior_jitter * b;
      out->neg_hessian.fixed += hess_local.topLeftCorner(nf, nf);
      out->neg_hessian.cross[i] = hess_local.topRightCorner(nf, p);
      out->neg_hessian.blocks[i] = hess_local.bottomRightCorner(p, p) + hs.d_inv;
      if (prior_jitter > 0.0) out->neg_hessian.blocks[i].diagonal().array() += prior_jitter;
    }
  }
  if constexpr (kDerivs) {
    out->value = value;
    out->finite = std::isfinite(value);
  }
  return value;
}

}  // namespace

double joint_log_posterior(const ModelData& md, const HyperState& hs, const Eigen::VectorXd& x, double prior_jitter) {
  return evaluate_posterior<false>(md, hs, x, Curvature::Observed, prior_jitter, nullptr);
}

double joint_log_posterior(const ModelSpec& spec, const LongDataset& data, const LatentField& field,
                           const HyperVector& hyper) {
  ModelData md(spec, data);
  if (!(field.layout == md.layout())) throw ConfigError("latent field layout does not match model and data");
  return joint_log_posterior(md, HyperState(spec, hyper), field.values);
}

LatentEval latent_derivatives(const ModelData& md, const HyperState& hs, const Eigen::VectorXd& x,
                              Curvature curvature, double prior_jitter) {
  LatentEval out;
  out.value = evaluate_posterior<true>(md, hs, x, curvature, prior_jitter, &out);
  out.finite = std::isfinite(out.value);
  return out;
}

Eigen::VectorXd pointwise_loglik(const ModelData& md, const HyperState& hs, const Eigen::VectorXd& x) {
  const auto& spec = md.spec();
  const auto& layout = md.layout();
  const auto nf = static_cast<Eigen::Index>(layout.n_fixed());
  const auto p = static_cast<Eigen::Index>(layout.p());
  std::size_t total = 0;
  for (const auto& d : md.subjects()) total += static_cast<std::size_t>(d.v.size() + d.y.size());
  Eigen::VectorXd out(static_cast<Eigen::Index>(total));
  Eigen::VectorXd local(nf + p);
  const double var = 1.0 / hs.eps_precision;
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i < md.subjects().size(); ++i) {
    const auto& d = md.subjects()[i];
    local.head(nf) = x.head(nf);
    local.tail(p) = x.segment(static_cast<Eigen::Index>(layout.b_offset(i)), p);
    if (d.v.size() > 0) {
      Eigen::VectorXd m = d.cov_design * local;
      for (Eigen::Index j = 0; j < m.size(); ++j) out(pos++) = gaussian_logpdf(d.v(j), m(j), var);
    }
    if (d.y.size() > 0) {
      Eigen::VectorXd eta = (d.out_base + hs.gamma * d.out_copy) * local;
      for (Eigen::Index k = 0; k < eta.size(); ++k)
        out(pos++) =
            outcome_kernel(spec.outcome_family, d.y(k), d.log_y(k), d.log1m_y(k), eta(k), hs.out_precision, false)
                .logf;
    }
  }
  return out;
}

// ---------------------------------------------------------------- inner

InnerResult inner_mode(const ModelData& md, const HyperVector& hyper, const LaplaceControl& control,
                       const Eigen::VectorXd* start) {
  const HyperState hs(md.spec(), hyper);
  const auto& layout = md.layout();
  InnerResult res;
  Eigen::VectorXd x = start ? *start : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.size()));
  LatentEval ev = latent_derivatives(md, hs, x, Curvature::Observed, control.prior_jitter);
  if (!ev.finite && start) {
    x.setZero();
    ev = latent_derivatives(md, hs, x, Curvature::Observed, control.prior_jitter);
  }
  int it = 0;
  for (; it < control.max_iter && ev.finite; ++it) {
    if (ev.gradient.lpNorm<Eigen::Infinity>() < control.tol) {
      res.converged = true;
      break;
    }
    ArrowCholesky chol(ev.neg_hessian);
    if (!chol.ok()) {
      LatentEval fisher = latent_derivatives(md, hs, x, Curvature::Fisher, control.prior_jitter);
      chol = ArrowCholesky(fisher.neg_hessian);
      if (!chol.ok()) break;
    }
    const Eigen::VectorXd step = chol.solve(ev.gradient);
    const double f0 = ev.value;
    const double slack = 1e-12 * (1.0 + std::abs(f0));
    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    for (int h = 0; h < 30; ++h, t *= 0.5) {
      x_new = x + t * step;
      const double f1 = joint_log_posterior(md, hs, x_new, control.prior_jitter);
      if (std::isfinite(f1) && f1 >= f0 - slack) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    x = std::move(x_new);
    ev = latent_derivatives(md, hs, x, Curvature::Observed, control.prior_jitter);
  }
  res.iterations = it;
  if (!ev.finite) {
    res.log_posterior = kNegInf;
    res.mode = LatentField(layout, x);
    return res;
  }
  if (!res.converged && ev.gradient.lpNorm<Eigen::Infinity>() < control.tol) res.converged = true;
  ArrowCholesky chol(ev.neg_hessian);
  res.precision = std::move(ev.neg_hessian);
  if (!chol.ok()) {
    LatentEval fisher = latent_derivatives(md, hs, x, Curvature::Fisher, control.prior_jitter);
    chol = ArrowCholesky(fisher.neg_hessian);
    res.precision = std::move(fisher.neg_hessian);
    res.fisher_curvature = true;
  }
  res.log_posterior = ev.value;
  res.log_det_precision = chol.ok() ? chol.log_det() : std::numeric_limits<double>::quiet_NaN();
  if (!chol.ok()) res.converged = false;
  res.mode = LatentField(layout, std::move(x));
  return res;
}

InnerResult inner_mode(const ModelSpec& spec, const LongDataset& data, const HyperVector& hyper) {
  ModelData md(spec, data);
  return inner_mode(md, hyper);
}

double log_marginal_hyper(const ModelData& md, const HyperVector& hyper, const LaplaceControl& control,
                          const Eigen::VectorXd* start, InnerResult* inner) {
  InnerResult res = inner_mode(md, hyper, control, start);
  double value = kNegInf;
  if (std::isfinite(res.log_posterior) && std::isfinite(res.log_det_precision)) {
    const double k = static_cast<double>(md.layout().size());
    value = res.log_posterior - 0.5 * res.log_det_precision + 0.5 * k * kLog2Pi;
  }
  if (inner) *inner = std::move(res);
  return value;
}

double log_marginal_hyper(const ModelSpec& spec, const LongDataset& data, const HyperVector& hyper) {
  ModelData md(spec, data);
  return log_marginal_hyper(md, hyper);
}

// ---------------------------------------------------------------- stage one

namespace {

struct LmmSubject {
  Eigen::MatrixXd x;
  Eigen::MatrixXd z;
  Eigen::VectorXd y;
};

Eigen::MatrixXd full_chol_from(const Eigen::VectorXd& theta, Eigen::Index q) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(q, q);
  L.diagonal() = theta.head(q).array().exp();
  Eigen::Index k = q;
  for (Eigen::Index i = 1; i < q; ++i)
    for (Eigen::Index j = 0; j < i; ++j) L(i, j) = theta(k++);
  return L;
}

struct LmmProfile {
  double loglik = kNegInf;
  Eigen::VectorXd beta;
};

LmmProfile lmm_profile(const std::vector<LmmSubject>& subjects, const Eigen::VectorXd& theta, Eigen::Index kf,
                       Eigen::Index q) {
  Eigen::MatrixXd L = full_chol_from(theta, q);
  Eigen::MatrixXd D = L * L.transpose();
  const double sigma2 = std::exp(theta(theta.size() - 1));
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(kf, kf);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(kf);
  double yty = 0.0, log_det = 0.0, n_obs = 0.0;
  for (const auto& s : subjects) {
    Eigen::MatrixXd v = s.z * D * s.z.transpose();
    v.diagonal().array() += sigma2;
    Eigen::LLT<Eigen::MatrixXd> llt(v);
    if (llt.info() != Eigen::Success) return {};
    Eigen::MatrixXd lv = llt.matrixL();
    Eigen::MatrixXd xt = lv.triangularView<Eigen::Lower>().solve(s.x);
    Eigen::VectorXd yt = lv.triangularView<Eigen::Lower>().solve(s.y);
    xtx.noalias() += xt.transpose() * xt;
    xty.noalias() += xt.transpose() * yt;
    yty += yt.squaredNorm();
    log_det += 2.0 * lv.diagonal().array().log().sum();
    n_obs += static_cast<double>(s.y.size());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(xtx);
  if (llt.info() != Eigen::Success) return {};
  LmmProfile out;
  out.beta = llt.solve(xty);
  out.loglik = -0.5 * (n_obs * kLog2Pi + log_det + yty - xty.dot(out.beta));
  return out;
}

}  // namespace

StageOneResult stage_one_lmm(const LongDataset& data, Process process, const DesignRecipe& fixed,
                             const DesignRecipe& random, bool logit_transform) {
  std::vector<LmmSubject> subjects;
  double sum = 0.0, sum_sq = 0.0, n = 0.0, t_min = std::numeric_limits<double>::infinity(), t_max = -t_min;
  for (const auto& s : data.subjects) {
    const auto& times = process == Process::Cov ? s.cov_times : s.out_times;
    const auto& values = process == Process::Cov ? s.cov_values : s.out_values;
    if (times.empty()) continue;
    LmmSubject ls;
    ls.x = fixed.matrix(times, s.covariates);
    ls.z = random.matrix(times, s.covariates);
    ls.y.resize(static_cast<Eigen::Index>(values.size()));
    for (std::size_t k = 0; k < values.size(); ++k) {
      ls.y(k) = logit_transform ? logit(values[k]) : values[k];
      sum += ls.y(k);
      sum_sq += ls.y(k) * ls.y(k);
      n += 1.0;
      t_min = std::min(t_min, times[k]);
      t_max = std::max(t_max, times[k]);
    }
    subjects.push_back(std::move(ls));
  }
  if (subjects.empty()) throw DataError("stage-one fit: no observations for the " + to_string(process) + " process");
  const auto kf = static_cast<Eigen::Index>(fixed.size());
  const auto q = static_cast<Eigen::Index>(random.size());
  const double var = std::max(sum_sq / n - (sum / n) * (sum / n), 1e-8);
  const double t_scale = std::max({std::abs(t_min), std::abs(t_max), 1.0});

  Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(q + q * (q - 1) / 2 + 1);
  for (Eigen::Index j = 0; j < q; ++j) {
    double sd = std::sqrt(var / 2.0);
    if (random.columns[j].kind == DesignColumn::Kind::Time) sd /= t_scale;
    theta0(j) = std::log(sd);
  }
  theta0(theta0.size() - 1) = std::log(var / 2.0);

  // Per-observation scale keeps the tolerance meaningful at any sample size.
  auto objective = [&](const Eigen::VectorXd& theta) {
    auto prof = lmm_profile(subjects, theta, kf, q);
    return -prof.loglik / n;
  };
  BfgsOptions opts;
  opts.grad_tol = 1e-7;
  opts.max_iter = 300;
  auto res = bfgs_minimize(objective, theta0, opts);
  auto prof = lmm_profile(subjects, res.x, kf, q);
  StageOneResult out;
  Eigen::MatrixXd L = full_chol_from(res.x, q);
  out.D = L * L.transpose();
  out.sigma2 = std::exp(res.x(res.x.size() - 1));
  out.beta = prof.beta;
  out.loglik = prof.loglik;
  out.converged = res.converged;
  return out;
}

ModelSpec resolve_priors(const ModelSpec& spec, const LongDataset& data) {
  ModelSpec out = spec;
  if (!spec.priors.informative || !spec.priors.wishart_scale_diag.empty()) return out;
  auto cov = stage_one_lmm(data, Process::Cov, spec.cov_fixed, spec.cov_random, false);
  auto outc = stage_one_lmm(data, Process::Out, spec.out_fixed, spec.out_random,
                            spec.outcome_family == OutcomeFamily::Beta);
  std::vector<double> diag;
  for (Eigen::Index j = 0; j < cov.D.rows(); ++j) diag.push_back(std::max(std::sqrt(cov.D(j, j)), 1e-3));
  for (Eigen::Index j = 0; j < outc.D.rows(); ++j) diag.push_back(std::max(std::sqrt(outc.D(j, j)), 1e-3));
  out.priors.wishart_scale_diag = diag;
  return out;
}

HyperVector initial_hyper(const ModelSpec& spec, const LongDataset& data) {
  auto cov = stage_one_lmm(data, Process::Cov, spec.cov_fixed, spec.cov_random, false);
  const bool beta = spec.outcome_family == OutcomeFamily::Beta;
  auto outc = stage_one_lmm(data, Process::Out, spec.out_fixed, spec.out_random, beta);
  const auto qv = cov.D.rows(), qy = outc.D.rows();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(qv + qy, qv + qy);
  // Floors keep the starting Cholesky away from the log(0) boundary.
  D.topLeftCorner(qv, qv) = cov.D;
  D.bottomRightCorner(qy, qy) = outc.D;
  for (Eigen::Index j = 0; j < D.rows(); ++j) D(j, j) = std::max(D(j, j), 1e-6);
  Eigen::LLT<Eigen::MatrixXd> llt(D);
  if (llt.info() != Eigen::Success) {
    Eigen::VectorXd diag = D.diagonal();
    D = diag.asDiagonal();
  }
  double out_precision = 1.0 / std::max(outc.sigma2, 1e-8);
  if (beta) {
    double mean = 0.0, count = 0.0;
    for (const auto& s : data.subjects)
      for (double y : s.out_values) {
        mean += y;
        count += 1.0;
      }
    mean /= std::max(count, 1.0);
    const double spread = mean * (1.0 - mean);
    out_precision = std::clamp(1.0 / (spread * std::max(outc.sigma2, 1e-8)) - 1.0, 1.0, 1e4);
  }
  return HyperVector::from_natural(spec, D, std::max(cov.sigma2, 1e-8), out_precision, 0.0);
}

// ---------------------------------------------------------------- summaries

std::vector<NamedValue> natural_hyper(const ModelSpec& spec, const HyperVector& hyper) {
  std::vector<NamedValue> out;
  Eigen::MatrixXd D = hyper.covariance(spec);
  const auto p = D.rows();
  const auto qv = static_cast<Eigen::Index>(spec.qv());
  for (Eigen::Index j = 0; j < p; ++j) out.push_back({"sigma_" + std::to_string(j + 1), std::sqrt(D(j, j))});
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i + 1; j < p; ++j) {
      if (spec.kind == ModelKind::JSM && (i < qv) != (j < qv)) continue;
      out.push_back({"rho_" + std::to_string(i + 1) + std::to_string(j + 1), D(i, j) / std::sqrt(D(i, i) * D(j, j))});
    }
  out.push_back({"sigma2_eps", hyper.sigma2_eps()});
  out.push_back({spec.outcome_family == OutcomeFamily::Beta ? "phi" : "out_precision", hyper.out_precision()});
  if (spec.kind == ModelKind::JSM) out.push_back({"gamma", hyper.gamma});
  return out;
}

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = prob * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

const ParamSummary* FitResult::find_hyper(const std::string& name) const {
  for (const auto& s : hyper_summaries)
    if (s.name == name) return &s;
  return nullptr;
}

namespace {

std::string recipe_column_name(const DesignRecipe& r, std::size_t j) {
  switch (r.columns[j].kind) {
    case DesignColumn::Kind::Constant: return "intercept";
    case DesignColumn::Kind::Time: return "time";
    default: return r.columns[j].name;
  }
}

// Positive-definite repair by eigenvalue clamping.
Eigen::MatrixXd clamp_spd(const Eigen::MatrixXd& a, bool* adjusted) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (a + a.transpose()));
  Eigen::VectorXd ev = eig.eigenvalues();
  const double floor = std::max(ev.cwiseAbs().maxCoeff() * 1e-8, 1e-10);
  *adjusted = (ev.array() < floor).any();
  ev = ev.cwiseMax(floor);
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

FitResult fit(const ModelSpec& spec_in, const LongDataset& data, const FitControl& control) {
  spec_in.validate();
  if (data.n_subjects() == 0) throw DataError("dataset has no subjects");
  data.validate(spec_in.outcome_family);
  const ModelSpec spec = resolve_priors(spec_in, data);
  spec.validate();
  const ModelData md(spec, data);

  FitResult result;
  result.spec = spec;
  result.seed = control.seed;
  for (const auto& s : data.subjects) result.subject_ids.push_back(s.id);

  const HyperVector h0 = control.start ? *control.start : initial_hyper(spec, data);
  const Eigen::VectorXd theta0 = h0.flat(spec);

  // The inner solve for every trial point starts from the latent mode of the
  // last accepted outer iterate.
  Eigen::VectorXd anchor = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(md.layout().size()));
  Eigen::VectorXd last_theta;
  Eigen::VectorXd last_mode;
  int inner_iterations = 0;
  auto objective = [&](const Eigen::VectorXd& theta) {
    InnerResult inner;
    const double v =
        log_marginal_hyper(md, HyperVector::from_flat(spec, theta), control.inner, &anchor, &inner);
    inner_iterations += inner.iterations;
    last_theta = theta;
    last_mode = inner.mode.values;
    return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
  };
  auto on_accept = [&](const Eigen::VectorXd& theta) {
    if (last_theta.size() == theta.size() && last_theta == theta && last_mode.allFinite()) anchor = last_mode;
  };

  BfgsOptions opts;
  opts.grad_tol = control.grad_tol;
  opts.max_iter = control.max_iter;
  opts.fd_step = control.fd_step;
  auto opt = bfgs_minimize(objective, theta0, opts, on_accept);

  result.outer_iterations = opt.iterations;
  result.converged = opt.converged;
  result.message = opt.message;
  result.grad_max_norm = opt.gradient.size() ? opt.gradient.lpNorm<Eigen::Infinity>() : 0.0;
  result.hyper_mode = HyperVector::from_flat(spec, opt.x);

  // Gaussian approximation of the hyperparameter posterior.
  const double f_mode = objective(opt.x);
  on_accept(opt.x);
  Eigen::MatrixXd hess = central_hessian(objective, opt.x, control.hessian_step, f_mode);
  bool adjusted = false;
  Eigen::MatrixXd hess_spd = clamp_spd(hess, &adjusted);
  result.hyper_cov = hess_spd.llt().solve(Eigen::MatrixXd::Identity(hess.rows(), hess.cols()));
  result.hyper_cov = 0.5 * (result.hyper_cov + result.hyper_cov.transpose());
  result.hyper_cov_adjusted = adjusted;

  // Latent field at the hyper mode.
  InnerResult inner;
  result.log_marginal_hyper_at_mode = log_marginal_hyper(md, result.hyper_mode, control.inner, &anchor, &inner);
  inner_iterations += inner.iterations;
  result.inner_converged = inner.converged;
  result.latent_mode = inner.mode;
  result.latent_precision = inner.precision;
  result.inner_iterations = inner_iterations;

  // Hyperparameter summaries on the natural scale.
  {
    const auto d = opt.x.size();
    Eigen::MatrixXd chol = psd_factor(result.hyper_cov);
    auto mode_vals = natural_hyper(spec, result.hyper_mode);
    std::vector<std::vector<double>> samples(mode_vals.size());
    RngStream rng = RngStream::derive(control.seed, 0x4859504552ULL);
    const int pairs = std::max(1, control.summary_draws / 2);
    for (int s = 0; s < pairs; ++s) {
      Eigen::VectorXd z = rng.normal_vector(d);
      for (double sign : {1.0, -1.0}) {
        Eigen::VectorXd theta = opt.x + sign * (chol * z);
        auto vals = natural_hyper(spec, HyperVector::from_flat(spec, theta));
        for (std::size_t k = 0; k < vals.size(); ++k) samples[k].push_back(vals[k].value);
      }
    }
    for (std::size_t k = 0; k < mode_vals.size(); ++k) {
      const auto& v = samples[k];
      ParamSummary ps;
      ps.name = mode_vals[k].name;
      ps.mode = mode_vals[k].value;
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      ps.mean = mean;
      ps.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
      ps.q025 = quantile(v, 0.025);
      ps.q50 = quantile(v, 0.5);
      ps.q975 = quantile(v, 0.975);
      result.hyper_summaries.push_back(ps);
    }
  }

  // Latent summaries from the Gaussian approximation at the hyper mode.
  {
    ArrowCholesky chol(inner.precision);
    Eigen::VectorXd var = chol.ok() ? chol.marginal_variances()
                                    : Eigen::VectorXd::Constant(inner.mode.values.size(),
                                                                std::numeric_limits<double>::quiet_NaN());
    const auto& layout = md.layout();
    auto add = [&](std::string name, Eigen::Index idx) {
      ParamSummary ps;
      ps.name = std::move(name);
      ps.mode = ps.mean = ps.q50 = inner.mode.values(idx);
      ps.sd = std::sqrt(var(idx));
      ps.q025 = ps.mode - 1.959963984540054 * ps.sd;
      ps.q975 = ps.mode + 1.959963984540054 * ps.sd;
      result.latent_summaries.push_back(std::move(ps));
    };
    for (std::size_t j = 0; j < layout.kv; ++j)
      add("beta_v." + recipe_column_name(spec.cov_fixed, j), static_cast<Eigen::Index>(j));
    for (std::size_t j = 0; j < layout.ky; ++j)
      add("beta_y." + recipe_column_name(spec.out_fixed, j), static_cast<Eigen::Index>(layout.kv + j));
    for (std::size_t i = 0; i < layout.n_subjects; ++i) {
      for (std::size_t j = 0; j < layout.p(); ++j) {
        const bool is_v = j < layout.qv;
        const auto& recipe = is_v ? spec.cov_random : spec.out_random;
        const std::size_t col = is_v ? j : j - layout.qv;
        add("b." + data.subjects[i].id + "." + (is_v ? "v." : "y.") + recipe_column_name(recipe, col),
            static_cast<Eigen::Index>(layout.b_offset(i) + j));
      }
    }
  }

  result.function_evaluations = opt.evaluations;
  result.diagnostics.log_marginal_likelihood = log_marginal_likelihood(result);
  if (control.diagnostic_draws > 0) {
    auto ml = result.diagnostics.log_marginal_likelihood;
    result.diagnostics = compute_diagnostics(result, spec, data, control.diagnostic_draws, control.seed);
    result.diagnostics.log_marginal_likelihood = ml;
  }
  return result;
}

}  // namespace jointlong

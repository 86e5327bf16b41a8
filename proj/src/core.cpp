#include "jointlong/core.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "jointlong/gaussian.hpp"

namespace jointlong {

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view text) {
  auto begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(begin, end - begin + 1));
}

bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] > v[i - 1])) return false;
  return true;
}

// Wishart prior on Q = D_b^{-1} for one diagonal block, expressed on the
// (log-diagonal, off-diagonal) Cholesky coordinates of D_b.
double wishart_block_log_prior(const Eigen::MatrixXd& l_block, double df, const Eigen::VectorXd& r_diag) {
  const auto q = l_block.rows();
  Eigen::VectorXd log_l_diag = l_block.diagonal().array().log();
  // Q = L^{-T} L^{-1}
  Eigen::MatrixXd l_inv = l_block.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(q, q));
  Eigen::MatrixXd precision = l_inv.transpose() * l_inv;
  Eigen::MatrixXd scale = r_diag.cwiseInverse().asDiagonal();
  double value = wishart_logpdf(precision, df, scale);
  // |dQ/dD| = |D|^{-(q+1)}, |dD/dL| = 2^q prod L_ii^{q-i+1}, dL_ii/dlog L_ii = L_ii.
  const double log_det_d = 2.0 * log_l_diag.sum();
  value += -static_cast<double>(q + 1) * log_det_d + static_cast<double>(q) * std::log(2.0);
  for (Eigen::Index i = 0; i < q; ++i) value += static_cast<double>(q - i + 1) * log_l_diag(i);
  return value;
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::JMM ? "JMM" : "JSM"; }
std::string to_string(OutcomeFamily family) { return family == OutcomeFamily::Gaussian ? "gaussian" : "beta"; }
std::string to_string(Link link) { return link == Link::Identity ? "identity" : "logit"; }
std::string to_string(Process process) { return process == Process::Cov ? "cov" : "out"; }

ModelKind parse_model_kind(std::string_view text) {
  auto t = lower(trim(text));
  if (t == "jmm") return ModelKind::JMM;
  if (t == "jsm") return ModelKind::JSM;
  throw ConfigError("unknown model kind '" + std::string(text) + "' (expected JMM or JSM)");
}

OutcomeFamily parse_outcome_family(std::string_view text) {
  auto t = lower(trim(text));
  if (t == "gaussian" || t == "normal") return OutcomeFamily::Gaussian;
  if (t == "beta") return OutcomeFamily::Beta;
  throw ConfigError("unknown outcome family '" + std::string(text) + "' (expected gaussian or beta)");
}

Link parse_link(std::string_view text) {
  auto t = lower(trim(text));
  if (t == "identity") return Link::Identity;
  if (t == "logit") return Link::Logit;
  throw ConfigError("unknown link '" + std::string(text) + "' (expected identity or logit)");
}

// ---------------------------------------------------------------- designs

DesignRecipe DesignRecipe::intercept() { return DesignRecipe{{DesignColumn{DesignColumn::Kind::Constant, ""}}}; }

DesignRecipe DesignRecipe::intercept_time() {
  return DesignRecipe{{DesignColumn{DesignColumn::Kind::Constant, ""}, DesignColumn{DesignColumn::Kind::Time, ""}}};
}

DesignRecipe DesignRecipe::parse(std::string_view text) {
  DesignRecipe recipe;
  std::string buffer(text);
  std::stringstream ss(buffer);
  std::string token;
  while (std::getline(ss, token, '+')) {
    auto t = trim(token);
    if (t.empty()) throw ConfigError("empty term in design recipe '" + buffer + "'");
    if (t == "1") {
      recipe.columns.push_back({DesignColumn::Kind::Constant, ""});
    } else if (lower(t) == "time") {
      recipe.columns.push_back({DesignColumn::Kind::Time, ""});
    } else {
      for (char c : t)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'))
          throw ConfigError("invalid covariate name '" + t + "' in design recipe");
      recipe.columns.push_back({DesignColumn::Kind::Exogenous, t});
    }
  }
  if (recipe.columns.empty()) throw ConfigError("design recipe is empty");
  return recipe;
}

std::string DesignRecipe::describe() const {
  std::string out;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (j) out += " + ";
    switch (columns[j].kind) {
      case DesignColumn::Kind::Constant: out += "1"; break;
      case DesignColumn::Kind::Time: out += "time"; break;
      case DesignColumn::Kind::Exogenous: out += columns[j].name; break;
    }
  }
  return out;
}

Eigen::RowVectorXd DesignRecipe::row(double time, const std::map<std::string, double>& covariates) const {
  Eigen::RowVectorXd r(static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const auto& c = columns[j];
    switch (c.kind) {
      case DesignColumn::Kind::Constant: r(j) = 1.0; break;
      case DesignColumn::Kind::Time: r(j) = time; break;
      case DesignColumn::Kind::Exogenous: {
        auto it = covariates.find(c.name);
        if (it == covariates.end()) throw ConfigError("unknown exogenous covariate '" + c.name + "'");
        r(j) = it->second;
        break;
      }
    }
  }
  return r;
}

Eigen::MatrixXd DesignRecipe::matrix(std::span<const double> times,
                                     const std::map<std::string, double>& covariates) const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < times.size(); ++i) m.row(i) = row(times[i], covariates);
  return m;
}

// ---------------------------------------------------------------- dataset

std::size_t LongDataset::n_cov_observations() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.n_cov();
  return n;
}

std::size_t LongDataset::n_out_observations() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.n_out();
  return n;
}

void LongDataset::validate(OutcomeFamily family) const {
  for (const auto& s : subjects) {
    const std::string where = "subject '" + s.id + "': ";
    if (s.cov_times.size() != s.cov_values.size())
      throw DataError(where + "cov_times and cov_values differ in length");
    if (s.out_times.size() != s.out_values.size())
      throw DataError(where + "out_times and out_values differ in length");
    if (s.n_cov() + s.n_out() == 0) throw DataError(where + "no observations");
    if (!strictly_increasing(s.cov_times)) throw DataError(where + "covariate times not strictly increasing");
    if (!strictly_increasing(s.out_times)) throw DataError(where + "outcome times not strictly increasing");
    auto all_finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!all_finite(s.cov_times) || !all_finite(s.cov_values) || !all_finite(s.out_times) ||
        !all_finite(s.out_values))
      throw DataError(where + "non-finite value");
    if (family == OutcomeFamily::Beta)
      for (double y : s.out_values)
        if (!(y > 0.0 && y < 1.0)) throw DataError(where + "Beta outcome outside (0, 1)");
  }
}

double OutcomeRange::to_unit(double raw) const {
  double u = (raw - lo) / (hi - lo);
  return std::clamp(u, eps, 1.0 - eps);
}

void apply_outcome_range(LongDataset& data, const OutcomeRange& range) {
  if (!(range.hi > range.lo)) throw ConfigError("outcome range requires hi > lo");
  for (auto& s : data.subjects)
    for (double& y : s.out_values) y = range.to_unit(y);
}

// ---------------------------------------------------------------- spec

double ModelSpec::default_wishart_df(std::size_t block_dim) const {
  if (priors.wishart_df) return *priors.wishart_df;
  const double q = static_cast<double>(block_dim);
  return q * (q + 1.0) / 2.0 + 1.0;
}

void ModelSpec::validate() const {
  if (outcome_family == OutcomeFamily::Gaussian && link != Link::Identity)
    throw ConfigError("gaussian outcome family requires the identity link");
  if (outcome_family == OutcomeFamily::Beta && link != Link::Logit)
    throw ConfigError("beta outcome family requires the logit link");
  if (cov_fixed.size() == 0 || out_fixed.size() == 0) throw ConfigError("fixed-effect recipes must be non-empty");
  if (cov_random.size() == 0 || out_random.size() == 0) throw ConfigError("random-effect recipes must be non-empty");
  const auto& pr = priors;
  if (!(pr.beta_precision > 0 && pr.gamma_precision > 0 && pr.eps_precision_shape > 0 && pr.eps_precision_rate > 0 &&
        pr.out_precision_shape > 0 && pr.out_precision_rate > 0 && pr.phi_shape > 0 && pr.phi_rate > 0))
    throw ConfigError("prior precisions, shapes and rates must be strictly positive");
  if (!pr.wishart_scale_diag.empty()) {
    if (pr.wishart_scale_diag.size() != p())
      throw ConfigError("wishart_scale_diag must have one entry per random effect (" + std::to_string(p()) + ")");
    for (double r : pr.wishart_scale_diag)
      if (!(r > 0)) throw ConfigError("wishart_scale_diag entries must be strictly positive");
  }
  auto check_df = [&](std::size_t q) {
    if (!(default_wishart_df(q) > static_cast<double>(q) - 1.0))
      throw ConfigError("wishart_df must exceed p - 1 = " + std::to_string(q - 1));
  };
  if (kind == ModelKind::JMM) {
    check_df(p());
  } else {
    check_df(qv());
    check_df(qy());
  }
}

// ---------------------------------------------------------------- latent

LatentLayout LatentLayout::from(const ModelSpec& spec, std::size_t n_subjects) {
  return LatentLayout{spec.kv(), spec.ky(), spec.qv(), spec.qy(), n_subjects};
}

LatentField::LatentField(const LatentLayout& l, Eigen::VectorXd v) : layout(l), values(std::move(v)) {
  if (static_cast<std::size_t>(values.size()) != layout.size())
    throw ConfigError("latent vector size does not match layout");
}

// ---------------------------------------------------------------- hyper

std::vector<std::pair<std::size_t, std::size_t>> chol_offdiag_positions(const ModelSpec& spec) {
  std::vector<std::pair<std::size_t, std::size_t>> pos;
  const std::size_t p = spec.p(), qv = spec.qv();
  for (std::size_t i = 1; i < p; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      if (spec.kind == ModelKind::JSM && (i >= qv) != (j >= qv)) continue;
      pos.emplace_back(i, j);
    }
  return pos;
}

std::size_t HyperVector::flat_size(const ModelSpec& spec) {
  return spec.p() + chol_offdiag_positions(spec).size() + 2 + (spec.kind == ModelKind::JSM ? 1 : 0);
}

HyperVector HyperVector::from_flat(const ModelSpec& spec, const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != flat_size(spec))
    throw ConfigError("hyperparameter vector has wrong length");
  HyperVector h;
  const auto p = static_cast<Eigen::Index>(spec.p());
  const auto n_off = static_cast<Eigen::Index>(chol_offdiag_positions(spec).size());
  h.d_chol_log_diag = flat.segment(0, p);
  h.d_chol_offdiag = flat.segment(p, n_off);
  h.log_eps_precision = flat(p + n_off);
  h.log_out_precision = flat(p + n_off + 1);
  if (spec.kind == ModelKind::JSM) h.gamma = flat(p + n_off + 2);
  return h;
}

Eigen::VectorXd HyperVector::flat(const ModelSpec& spec) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(flat_size(spec)));
  const auto p = d_chol_log_diag.size();
  const auto n_off = d_chol_offdiag.size();
  out.segment(0, p) = d_chol_log_diag;
  out.segment(p, n_off) = d_chol_offdiag;
  out(p + n_off) = log_eps_precision;
  out(p + n_off + 1) = log_out_precision;
  if (spec.kind == ModelKind::JSM) out(p + n_off + 2) = gamma;
  return out;
}

HyperVector HyperVector::from_natural(const ModelSpec& spec, const Eigen::MatrixXd& D, double sigma2_eps,
                                      double out_precision, double gamma) {
  const auto p = static_cast<Eigen::Index>(spec.p());
  if (D.rows() != p || D.cols() != p) throw ConfigError("D has wrong dimension");
  Eigen::MatrixXd target = D;
  if (spec.kind == ModelKind::JSM) {
    const auto qv = static_cast<Eigen::Index>(spec.qv());
    target.block(0, qv, qv, p - qv).setZero();
    target.block(qv, 0, p - qv, qv).setZero();
  }
  Eigen::LLT<Eigen::MatrixXd> llt(target);
  if (llt.info() != Eigen::Success) throw NumericalError("D is not positive definite");
  Eigen::MatrixXd L = llt.matrixL();
  HyperVector h;
  h.d_chol_log_diag = L.diagonal().array().log();
  auto pos = chol_offdiag_positions(spec);
  h.d_chol_offdiag.resize(static_cast<Eigen::Index>(pos.size()));
  for (std::size_t k = 0; k < pos.size(); ++k) h.d_chol_offdiag(k) = L(pos[k].first, pos[k].second);
  h.log_eps_precision = -std::log(sigma2_eps);
  h.log_out_precision = std::log(out_precision);
  h.gamma = spec.kind == ModelKind::JSM ? gamma : 0.0;
  return h;
}

Eigen::MatrixXd HyperVector::cholesky_factor(const ModelSpec& spec) const {
  const auto p = static_cast<Eigen::Index>(spec.p());
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(p, p);
  L.diagonal() = d_chol_log_diag.array().exp();
  auto pos = chol_offdiag_positions(spec);
  for (std::size_t k = 0; k < pos.size(); ++k) L(pos[k].first, pos[k].second) = d_chol_offdiag(k);
  return L;
}

Eigen::MatrixXd HyperVector::covariance(const ModelSpec& spec) const {
  Eigen::MatrixXd L = cholesky_factor(spec);
  return L * L.transpose();
}

double HyperVector::eps_precision() const { return std::exp(log_eps_precision); }
double HyperVector::out_precision() const { return std::exp(log_out_precision); }

std::vector<std::string> hyper_flat_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < spec.p(); ++j) names.push_back("log_chol_diag_" + std::to_string(j + 1));
  for (auto [i, j] : chol_offdiag_positions(spec))
    names.push_back("chol_" + std::to_string(i + 1) + std::to_string(j + 1));
  names.push_back("log_eps_precision");
  names.push_back(spec.outcome_family == OutcomeFamily::Beta ? "log_phi" : "log_out_precision");
  if (spec.kind == ModelKind::JSM) names.push_back("gamma");
  return names;
}

// ---------------------------------------------------------------- densities

double inverse_link(Link link, double eta) {
  if (link == Link::Identity) return eta;
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double gaussian_logpdf(double x, double mean, double variance) {
  const double r = x - mean;
  return -0.5 * (kLog2Pi + std::log(variance) + r * r / variance);
}

double gamma_logpdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double beta_logpdf(double y, double mu, double phi) {
  if (!(mu > 0.0 && mu < 1.0)) throw NumericalError("Beta mean outside (0, 1)");
  const double a = mu * phi, b = (1.0 - mu) * phi;
  return std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(y) + (b - 1.0) * std::log1p(-y);
}

OutcomeKernel outcome_kernel(OutcomeFamily family, double y, double log_y, double log1m_y, double eta,
                             double precision, bool with_derivatives) {
  OutcomeKernel k;
  if (family == OutcomeFamily::Gaussian) {
    const double r = y - eta;
    k.logf = 0.5 * (std::log(precision) - kLog2Pi - precision * r * r);
    k.d1 = precision * r;
    k.d2 = -precision;
    k.fisher = precision;
    return k;
  }
  // mu and 1 - mu from separate expit calls keep both tails representable.
  const double mu = inverse_link(Link::Logit, eta);
  const double one_m_mu = inverse_link(Link::Logit, -eta);
  const double phi = precision;
  const double a = mu * phi, b = one_m_mu * phi;
  if (!(a > 0.0 && b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    k.ok = false;
    k.logf = -std::numeric_limits<double>::infinity();
    return k;
  }
  k.logf = std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * log_y + (b - 1.0) * log1m_y;
  if (!with_derivatives) return k;
  const double dmu = mu * one_m_mu;
  const double score_mu = phi * (log_y - log1m_y - boost::math::digamma(a) + boost::math::digamma(b));
  const double info_mu = phi * phi * (boost::math::trigamma(a) + boost::math::trigamma(b));
  k.d1 = score_mu * dmu;
  k.fisher = info_mu * dmu * dmu;
  k.d2 = -k.fisher + score_mu * dmu * (one_m_mu - mu);
  return k;
}

Eigen::VectorXd linear_predictor(const ModelSpec& spec, const LatentField& field, std::size_t subject_index,
                                 const SubjectRecord& subject, Process process, std::span<const double> times,
                                 double gamma) {
  for (double t : times)
    if (!std::isfinite(t)) throw DataError("non-finite time in linear predictor");
  const auto& cov = subject.covariates;
  Eigen::VectorXd m = spec.cov_fixed.matrix(times, cov) * field.beta_v() +
                      spec.cov_random.matrix(times, cov) * field.b_v(subject_index);
  if (process == Process::Cov) return m;
  Eigen::VectorXd eta = spec.out_fixed.matrix(times, cov) * field.beta_y() +
                        spec.out_random.matrix(times, cov) * field.b_y(subject_index);
  if (spec.kind == ModelKind::JSM) eta += gamma * m;
  return eta;
}

double obs_loglik(const ModelSpec& spec, const LatentField& field, const HyperVector& hyper,
                  std::size_t subject_index, const SubjectRecord& subject) {
  double total = 0.0;
  const double sigma2 = hyper.sigma2_eps();
  Eigen::VectorXd m = linear_predictor(spec, field, subject_index, subject, Process::Cov, subject.cov_times);
  for (std::size_t j = 0; j < subject.n_cov(); ++j) total += gaussian_logpdf(subject.cov_values[j], m(j), sigma2);
  Eigen::VectorXd eta =
      linear_predictor(spec, field, subject_index, subject, Process::Out, subject.out_times, hyper.gamma);
  for (std::size_t k = 0; k < subject.n_out(); ++k) {
    const double y = subject.out_values[k];
    if (spec.outcome_family == OutcomeFamily::Gaussian) {
      total += gaussian_logpdf(y, eta(k), 1.0 / hyper.out_precision());
    } else {
      const double mu = inverse_link(Link::Logit, eta(k));
      total += beta_logpdf(y, mu, hyper.out_precision());
    }
  }
  return total;
}

double hyper_log_prior(const ModelSpec& spec, const HyperVector& hyper) {
  const auto& pr = spec.priors;
  const auto p = static_cast<Eigen::Index>(spec.p());
  Eigen::VectorXd r_diag = Eigen::VectorXd::Ones(p);
  if (!pr.wishart_scale_diag.empty())
    r_diag = Eigen::Map<const Eigen::VectorXd>(pr.wishart_scale_diag.data(), p);
  Eigen::MatrixXd L = hyper.cholesky_factor(spec);
  double value = 0.0;
  if (spec.kind == ModelKind::JMM) {
    value += wishart_block_log_prior(L, spec.default_wishart_df(spec.p()), r_diag);
  } else {
    const auto qv = static_cast<Eigen::Index>(spec.qv()), qy = p - qv;
    value += wishart_block_log_prior(L.block(0, 0, qv, qv), spec.default_wishart_df(spec.qv()), r_diag.head(qv));
    value += wishart_block_log_prior(L.block(qv, qv, qy, qy), spec.default_wishart_df(spec.qy()), r_diag.tail(qy));
  }
  // Gamma priors on precisions; + log x is the Jacobian of the log transform.
  const double tau = hyper.eps_precision();
  value += gamma_logpdf(tau, pr.eps_precision_shape, pr.eps_precision_rate) + hyper.log_eps_precision;
  const double out = hyper.out_precision();
  if (spec.outcome_family == OutcomeFamily::Beta)
    value += gamma_logpdf(out, pr.phi_shape, pr.phi_rate) + hyper.log_out_precision;
  else
    value += gamma_logpdf(out, pr.out_precision_shape, pr.out_precision_rate) + hyper.log_out_precision;
  if (spec.kind == ModelKind::JSM) value += gaussian_logpdf(hyper.gamma, pr.gamma_mean, 1.0 / pr.gamma_precision);
  return value;
}

}  // namespace jointlong

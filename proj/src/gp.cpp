#include "geodrift/gp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "geodrift/io.hpp"

namespace geodrift {

using nlohmann::json;

namespace {

Mat symmetrized(const Mat& M) { return 0.5 * (M + M.transpose()); }

/// Cholesky with the module's retry policy: one extra attempt with the jitter
/// grown tenfold, then give up.
Eigen::LLT<Mat> chol_with_retry(Mat M, double jitter, const char* what) {
  Eigen::LLT<Mat> llt(M);
  if (llt.info() == Eigen::Success) return llt;
  M.diagonal().array() += 10.0 * jitter;
  llt.compute(M);
  if (llt.info() == Eigen::Success) return llt;
  std::ostringstream msg;
  msg << what << ": singular system (jitter retry failed)";
  throw std::runtime_error(msg.str());
}

double median_of(std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
  return 0.5 * (hi + v[mid - 1]);
}

}  // namespace

void KernelConfig::validate() const {
  if (lengthscales.size() == 0)
    throw std::invalid_argument("kernel: lengthscales unset");
  if ((lengthscales.array() <= 0.0).any())
    throw std::invalid_argument("kernel: lengthscales must be positive");
  if (variance <= 0.0) throw std::invalid_argument("kernel: variance must be positive");
}

Mat KernelConfig::gram(const Mat& X, const Mat& Z) const {
  validate();
  if (X.cols() != lengthscales.size() || Z.cols() != lengthscales.size())
    throw std::invalid_argument("kernel: dimension mismatch");
  Mat Xs = X * lengthscales.cwiseInverse().asDiagonal();
  Mat Zs = Z * lengthscales.cwiseInverse().asDiagonal();
  Mat D = (-2.0 * Xs * Zs.transpose()).rowwise() +
          Zs.rowwise().squaredNorm().transpose();
  D.colwise() += Xs.rowwise().squaredNorm();
  return variance * (-0.5 * D.array().max(0.0)).exp().matrix();
}

KernelConfig KernelConfig::from_data(const Mat& X, const Mat& Y,
                                     double lengthscale_factor,
                                     double variance_factor) {
  if (X.rows() < 2) throw std::invalid_argument("kernel policy: need >= 2 inputs");
  const long d = X.cols();
  // Cap the pair count by strided subsampling; deterministic.
  const long cap = 1000;
  const long step = std::max<long>(1, (X.rows() + cap - 1) / cap);
  std::vector<long> idx;
  for (long i = 0; i < X.rows(); i += step) idx.push_back(i);

  KernelConfig k;
  k.lengthscales.resize(d);
  std::vector<double> dist;
  dist.reserve(idx.size() * (idx.size() - 1) / 2);
  for (long c = 0; c < d; ++c) {
    dist.clear();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = i + 1; j < idx.size(); ++j)
        dist.push_back(std::abs(X(idx[i], c) - X(idx[j], c)));
    double med = median_of(dist);
    if (med <= 1e-12) med = std::max(1e-8, X.col(c).array().abs().maxCoeff() * 1e-3);
    k.lengthscales(c) = lengthscale_factor * med;
  }

  double var = 0.0;
  if (Y.rows() > 1) {
    for (long c = 0; c < Y.cols(); ++c) {
      const double mean = Y.col(c).mean();
      var += (Y.col(c).array() - mean).square().sum() /
             static_cast<double>(Y.rows() - 1);
    }
    var /= static_cast<double>(Y.cols());
  }
  k.variance = variance_factor * std::max(var, 1e-12);
  k.validate();
  return k;
}

json KernelConfig::to_json() const {
  json j;
  j["family"] = "se";
  j["variance"] = variance;
  j["lengthscales"] = std::vector<double>(
      lengthscales.data(), lengthscales.data() + lengthscales.size());
  return j;
}

KernelConfig KernelConfig::from_json(const json& j) {
  if (j.at("family").get<std::string>() != "se")
    throw std::invalid_argument("kernel: unknown family");
  KernelConfig k;
  const auto ls = j.at("lengthscales").get<std::vector<double>>();
  k.lengthscales = Eigen::Map<const Vec>(ls.data(), ls.size());
  k.variance = j.at("variance").get<double>();
  k.validate();
  return k;
}

Mat GPDriftModel::eval_batch(const Mat& X) const {
  return kernel.gram(X, inducing) * coeff;
}

Vec GPDriftModel::var_batch(const Mat& X) const {
  if (!has_variance())
    throw std::logic_error("drift model: variance data not available (mean-only model)");
  Mat G = kernel.gram(X, inducing);
  Vec quad = (G * var_op).cwiseProduct(G).rowwise().sum();
  return (var_c0 * kernel.diag() - quad.array()).max(0.0).matrix();
}

Vec GPDriftModel::var_at(const Vec& x) const {
  const double v = var_batch(x.transpose())(0);
  return Vec::Constant(dim(), v);
}

Vec GPDriftModel::divergence_batch(const Mat& X) const {
  Mat G = kernel.gram(X, inducing);
  Vec div = Vec::Zero(X.rows());
  for (long i = 0; i < coeff.cols(); ++i) {
    const double inv_l2 = 1.0 / (kernel.lengthscales(i) * kernel.lengthscales(i));
    Vec gz = G * coeff.col(i).cwiseProduct(inducing.col(i));
    Vec gx = (G * coeff.col(i)).cwiseProduct(X.col(i));
    div += inv_l2 * (gz - gx);
  }
  return div;
}

json GPDriftModel::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = kind;
  j["dim"] = dim();
  j["sigma"] = sigma;
  j["tau"] = tau;
  j["kernel"] = kernel.to_json();
  json zs = json::array();
  for (long s = 0; s < inducing.rows(); ++s) {
    json row = json::array();
    for (long c = 0; c < inducing.cols(); ++c) row.push_back(inducing(s, c));
    zs.push_back(std::move(row));
  }
  j["inducing"] = std::move(zs);
  json cf = json::array();
  for (long c = 0; c < coeff.cols(); ++c) {
    json col = json::array();
    for (long s = 0; s < coeff.rows(); ++s) col.push_back(coeff(s, c));
    cf.push_back(std::move(col));
  }
  j["coefficients"] = std::move(cf);
  return j;
}

GPDriftModel GPDriftModel::from_json(const json& j) {
  if (j.at("schema_version").get<int>() != 1)
    throw std::invalid_argument("drift model: unsupported schema_version");
  GPDriftModel m;
  m.kind = j.at("kind").get<std::string>();
  m.sigma = j.at("sigma").get<double>();
  m.tau = j.at("tau").get<double>();
  m.kernel = KernelConfig::from_json(j.at("kernel"));
  const int d = j.at("dim").get<int>();

  const auto& zs = j.at("inducing");
  m.inducing.resize(zs.size(), d);
  for (std::size_t s = 0; s < zs.size(); ++s)
    for (int c = 0; c < d; ++c) m.inducing(s, c) = zs[s][c].get<double>();

  const auto& cf = j.at("coefficients");
  if (static_cast<int>(cf.size()) != d)
    throw std::invalid_argument("drift model: coefficient dimension mismatch");
  m.coeff.resize(m.inducing.rows(), d);
  for (int c = 0; c < d; ++c) {
    if (static_cast<long>(cf[c].size()) != m.coeff.rows())
      throw std::invalid_argument("drift model: coefficient length mismatch");
    for (long s = 0; s < m.coeff.rows(); ++s)
      m.coeff(s, c) = cf[c][s].get<double>();
  }
  return m;
}

void GPDriftModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json().dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

GPDriftModel GPDriftModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  json j;
  in >> j;
  return from_json(j);
}

Mat default_inducing_grid(const Mat& points, int target, double inflate) {
  if (points.rows() < 1) throw std::invalid_argument("inducing grid: no points");
  if (target < 1) throw std::invalid_argument("inducing grid: target must be positive");
  const long d = points.cols();
  Vec lo = points.colwise().minCoeff().transpose();
  Vec hi = points.colwise().maxCoeff().transpose();
  Vec ext = hi - lo;
  for (long c = 0; c < d; ++c)
    if (ext(c) <= 0.0) ext(c) = 1.0;
  lo -= inflate * ext;
  hi += inflate * ext;
  ext = hi - lo;

  // Per-dimension counts proportional to extent with product near target.
  double vol = 1.0;
  for (long c = 0; c < d; ++c) vol *= ext(c);
  const double rate = std::pow(static_cast<double>(target) / vol,
                               1.0 / static_cast<double>(d));
  std::vector<long> counts(d);
  long total = 1;
  for (long c = 0; c < d; ++c) {
    counts[c] = std::max<long>(2, std::lround(ext(c) * rate));
    total *= counts[c];
  }

  Mat grid(total, d);
  std::vector<long> ix(d, 0);
  for (long r = 0; r < total; ++r) {
    for (long c = 0; c < d; ++c) {
      const double f = (counts[c] == 1)
                           ? 0.5
                           : static_cast<double>(ix[c]) /
                                 static_cast<double>(counts[c] - 1);
      grid(r, c) = lo(c) + f * ext(c);
    }
    for (long c = d - 1; c >= 0; --c) {
      if (++ix[c] < counts[c]) break;
      ix[c] = 0;
    }
  }
  return grid;
}

GPDriftModel naive_gp_drift(const ObservationSet& obs,
                            const KernelConfig& kernel, double sigma) {
  const long K = obs.observations.rows();
  if (K < 2) throw std::invalid_argument("naive_gp_drift: need >= 2 observations");
  if (sigma <= 0.0) throw std::invalid_argument("naive_gp_drift: sigma must be positive");
  if (obs.tau <= 0.0) throw std::invalid_argument("naive_gp_drift: tau must be positive");

  const long n = K - 1;
  Mat X = obs.observations.topRows(n);
  Mat Y = (obs.observations.bottomRows(n) - X) / obs.tau;
  const double noise = sigma * sigma / obs.tau;

  GPDriftModel m;
  m.kind = "naive";
  m.kernel = kernel;
  m.sigma = sigma;
  m.tau = obs.tau;

  if (n <= 1000) {
    Mat Kxx = kernel.gram(X, X);
    Kxx.diagonal().array() += noise;
    auto llt = chol_with_retry(std::move(Kxx), 1e-8, "naive_gp_drift");
    m.inducing = std::move(X);
    m.coeff = llt.solve(Y);
    m.var_c0 = 1.0;
    m.var_op = llt.solve(Mat::Identity(n, n));
    return m;
  }

  // Inducing-point approximation for long observation records.
  Mat ZS = default_inducing_grid(obs.observations);
  Mat Kzx = kernel.gram(ZS, X);
  Mat Kzz = kernel.gram(ZS, ZS);
  Mat C = Kzx * Kzx.transpose() + noise * Kzz;
  auto llt = chol_with_retry(std::move(C), 1e-8, "naive_gp_drift (sparse)");
  m.inducing = std::move(ZS);
  m.coeff = llt.solve(Kzx * Y);
  m.var_c0 = 0.0;
  m.var_op = -noise * llt.solve(Mat::Identity(m.inducing.rows(), m.inducing.rows()));
  return m;
}

void BridgeIntegrals::init(Mat inducing, KernelConfig k, int dim) {
  ZS = std::move(inducing);
  kernel = std::move(k);
  I1 = Mat::Zero(ZS.rows(), ZS.rows());
  I2 = Mat::Zero(ZS.rows(), dim);
  dt = 0.0;
  particles = bridges = slices = 0;
}

void BridgeIntegrals::accumulate(const BridgeSolution& sol) {
  if (I1.rows() == 0) throw std::logic_error("BridgeIntegrals: init first");
  if (sol.dim != I2.cols())
    throw std::invalid_argument("BridgeIntegrals: dimension mismatch");
  if (bridges == 0) {
    dt = sol.dt;
    particles = sol.params.particles;
  } else if (dt != sol.dt || particles != sol.params.particles) {
    throw std::invalid_argument("BridgeIntegrals: inconsistent dt or particle count");
  }

  const long N = sol.F[1].rows();
  const long max_rows = 8192;
  const long slices_per_chunk = std::max<long>(1, max_rows / N);
  long ti = 1;
  while (ti <= sol.L) {
    const long m = std::min<long>(slices_per_chunk, sol.L - ti + 1);
    Mat X(m * N, sol.dim), G(m * N, sol.dim);
    for (long s = 0; s < m; ++s) {
      X.middleRows(s * N, N) = sol.F[ti + s];
      G.middleRows(s * N, N) = sol.g[ti + s];
    }
    if (!G.allFinite() || !X.allFinite())
      throw std::invalid_argument("BridgeIntegrals: non-finite bridge data");
    Mat Kt = kernel.gram(ZS, X);  // S x (m N)
    I1.selfadjointView<Eigen::Lower>().rankUpdate(Kt);
    I2.noalias() += Kt * G;
    ti += m;
  }
  slices += sol.L;
  bridges += 1;
}

Mat BridgeIntegrals::I1_normalized() const {
  Mat full = I1.selfadjointView<Eigen::Lower>();
  if (particles == 0) return full;
  return (dt / static_cast<double>(particles)) * full;
}

Mat BridgeIntegrals::I2_normalized() const {
  if (particles == 0) return I2;
  return (dt / static_cast<double>(particles)) * I2;
}

BridgeIntegrals accumulate_bridge_integrals(
    const std::vector<BridgeSolution>& bridges, const Mat& ZS,
    const KernelConfig& kernel) {
  BridgeIntegrals ints;
  ints.init(ZS, kernel, static_cast<int>(ZS.cols()));
  for (const auto& sol : bridges)
    if (sol.ok) ints.accumulate(sol);
  return ints;
}

GPDriftModel sparse_posterior_drift(const BridgeIntegrals& ints, double sigma,
                                    double ridge) {
  if (sigma <= 0.0)
    throw std::invalid_argument("sparse_posterior_drift: sigma must be positive");
  const long S = ints.ZS.rows();
  if (S == 0) throw std::invalid_argument("sparse_posterior_drift: empty inducing set");
  const double inv_s2 = 1.0 / (sigma * sigma);

  Mat Ks = ints.kernel.gram(ints.ZS, ints.ZS);
  Ks.diagonal().array() += ridge;
  auto llt = chol_with_retry(Ks, ridge, "sparse_posterior_drift");

  // I1 is a sum of kernel-feature outer products, so Lambda is PSD in exact
  // arithmetic.  Routing the solves through a factor of I1 keeps it PSD
  // through roundoff instead of trusting two back-to-back K^-1 applications.
  const Eigen::SelfAdjointEigenSolver<Mat> ei(ints.I1_normalized());
  if (ei.info() != Eigen::Success)
    throw std::runtime_error("sparse_posterior_drift: I1 eigendecomposition failed");
  const Mat B = llt.solve(
      ei.eigenvectors() *
      ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal());
  Mat Lambda = Mat::Zero(S, S);
  Lambda.selfadjointView<Eigen::Lower>().rankUpdate(B, inv_s2);
  Lambda = Mat(Lambda.selfadjointView<Eigen::Lower>());
  Mat D = llt.solve(ints.I2_normalized()) * inv_s2;

  Mat C = Mat::Identity(S, S) + Lambda * Ks;
  Eigen::PartialPivLU<Mat> lu(C);
  Mat Cinv = lu.inverse();
  const double cond1 = C.cwiseAbs().colwise().sum().maxCoeff() *
                       Cinv.cwiseAbs().colwise().sum().maxCoeff();
  if (!Cinv.allFinite() || cond1 > 1e12) {
    std::ostringstream msg;
    msg << "sparse_posterior_drift: ill-conditioned system (cond_1 ~ " << cond1
        << ")";
    throw std::runtime_error(msg.str());
  }

  GPDriftModel m;
  m.kind = "sparse_path";
  m.kernel = ints.kernel;
  m.inducing = ints.ZS;
  m.sigma = sigma;
  m.coeff = Cinv * D;
  m.var_c0 = 1.0;
  m.var_op = symmetrized(Cinv * Lambda);
  m.Lambda = std::move(Lambda);
  return m;
}

PathDiagnostic path_likelihood(const GPDriftModel& model,
                               const std::vector<BridgeSolution>& bridges) {
  double s_f = 0.0, s_div = 0.0, s_fg = 0.0;
  double dt = 0.0;
  long particles = 0;
  for (const auto& sol : bridges) {
    if (!sol.ok) continue;
    dt = sol.dt;
    particles = sol.params.particles;
    for (long ti = 1; ti <= sol.L; ++ti) {
      Mat fhat = model.eval_batch(sol.F[ti]);
      s_f += fhat.squaredNorm();
      s_fg += fhat.cwiseProduct(sol.g[ti]).sum();
      s_div += model.divergence_batch(sol.F[ti]).sum();
    }
  }
  PathDiagnostic out;
  if (particles == 0) return out;
  const double scale = dt / static_cast<double>(particles);
  out.literal = scale * (0.5 * s_f + s_div + s_fg);
  const double inv_s2 = 1.0 / (model.sigma * model.sigma);
  out.consistent = scale * ((0.5 * s_f - s_fg) * inv_s2 + 0.5 * s_div);
  return out;
}

}  // namespace geodrift

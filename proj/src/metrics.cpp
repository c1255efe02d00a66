#include "pcdm/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <map>
#include <mutex>

#include "pcdm/errors.hpp"

namespace pcdm {

namespace {

constexpr double kEigenClamp = -1e-10;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigen-decomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < kEigenClamp)
      throw NumericError(std::string(what) + " is indefinite (eigenvalue " + std::to_string(ev[i]) + ")");
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

std::vector<double> moment_features(const SemanticDrawing& d) {
  std::array<double, kNumClasses> n{}, su{}, sv{}, suu{}, svv{};
  for (int64_t y = 0; y < d.height; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(d.height);
    for (int64_t x = 0; x < d.width; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(d.width);
      const auto c = static_cast<size_t>(d.at(x, y));
      n[c] += 1;
      su[c] += u;
      sv[c] += v;
      suu[c] += u * u;
      svv[c] += v * v;
    }
  }
  const double total = static_cast<double>(d.width * d.height);
  std::vector<double> f;
  f.reserve(25);
  for (size_t c = 0; c < kNumClasses; ++c) f.push_back(n[c] / total);
  for (size_t c = 0; c < kNumClasses; ++c) {
    if (n[c] == 0) {
      f.insert(f.end(), {0.0, 0.0, 0.0, 0.0});
      continue;
    }
    const double mu = su[c] / n[c], mv = sv[c] / n[c];
    f.push_back(mu);
    f.push_back(mv);
    f.push_back(std::max(0.0, suu[c] / n[c] - mu * mu));
    f.push_back(std::max(0.0, svv[c] / n[c] - mv * mv));
  }
  return f;
}

struct Registry {
  std::mutex mu;
  std::map<std::string, FeatureExtractor> table{
      {"moments", moment_features},
      {"fractions", [](const SemanticDrawing& d) {
         std::vector<double> f = moment_features(d);
         f.resize(kNumClasses);
         return f;
       }}};
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

ConfusionMatrix confusion_matrix(const SemanticDrawing& pred, const SemanticDrawing& label) {
  if (pred.width != label.width || pred.height != label.height)
    throw DimensionError("score_iou: prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                         " vs label " + std::to_string(label.width) + "x" + std::to_string(label.height));
  ConfusionMatrix cm{};
  for (size_t i = 0; i < pred.classes.size(); ++i)
    ++cm[static_cast<size_t>(label.classes[i])][static_cast<size_t>(pred.classes[i])];
  return cm;
}

double weighted_iou(const ConfusionMatrix& cm, const std::array<double, kNumClasses>& weights) {
  double w = 0.0;
  for (size_t i = 0; i < kNumClasses; ++i) {
    int64_t row = 0, col = 0;
    for (size_t j = 0; j < kNumClasses; ++j) {
      row += cm[i][j];
      col += cm[j][i];
    }
    const int64_t uni = row + col - cm[i][i];
    if (uni > 0) w += weights[i] * static_cast<double>(cm[i][i]) / static_cast<double>(uni);
  }
  return w;
}

double shear_wall_ratio(const SemanticDrawing& d) {
  const auto h = d.histogram();
  const int64_t sw = h[static_cast<size_t>(PixelClass::ShearWall)];
  const int64_t walls = sw + h[static_cast<size_t>(PixelClass::InfillWall)];
  return walls == 0 ? 0.0 : static_cast<double>(sw) / static_cast<double>(walls);
}

double eta_sw_ratio(double ratio_pred, double ratio_label) {
  if (!(ratio_pred > 0)) throw NumericError("eta is undefined for a zero predicted shear-wall ratio");
  return std::max(0.0, 1.0 - std::abs(ratio_pred - ratio_label) / ratio_pred);
}

IoUReport score_iou(const SemanticDrawing& pred, const SemanticDrawing& label) {
  const ConfusionMatrix cm = confusion_matrix(pred, label);
  constexpr size_t s = static_cast<size_t>(PixelClass::ShearWall);
  IoUReport r;
  int64_t row = 0, col = 0;
  for (size_t j = 0; j < kNumClasses; ++j) {
    row += cm[s][j];
    col += cm[j][s];
  }
  const int64_t uni = row + col - cm[s][s];
  r.siou = uni == 0 ? 0.0 : static_cast<double>(cm[s][s]) / static_cast<double>(uni);
  r.wiou = weighted_iou(cm);
  r.sw_ratio_pred = shear_wall_ratio(pred);
  r.sw_ratio_label = shear_wall_ratio(label);
  if (r.sw_ratio_pred > 0) {
    r.eta_sw = eta_sw_ratio(r.sw_ratio_pred, r.sw_ratio_label);
  } else {
    r.eta_sw = 0.0;
    r.eta_undefined = true;
  }
  r.score = r.eta_sw * (0.5 * r.siou + 0.5 * r.wiou);
  return r;
}

FeatureCloud fit_feature_cloud(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2) throw DataError("a feature cloud needs at least 2 samples, got " + std::to_string(features.size()));
  const auto dim = static_cast<Eigen::Index>(features[0].size());
  if (dim == 0) throw DataError("feature vectors are empty");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(features.size()), dim);
  for (size_t i = 0; i < features.size(); ++i) {
    if (static_cast<Eigen::Index>(features[i].size()) != dim)
      throw DataError("feature vector " + std::to_string(i) + " has dimension " + std::to_string(features[i].size()) +
                      ", expected " + std::to_string(dim));
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(features[i].data(), dim);
  }
  FeatureCloud c;
  c.n = static_cast<int64_t>(features.size());
  c.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - c.mean.transpose();
  c.cov = centered.transpose() * centered / static_cast<double>(c.n - 1);
  c.cov = 0.5 * (c.cov + c.cov.transpose()).eval();
  return c;
}

double frechet_distance(const FeatureCloud& r, const FeatureCloud& g) {
  if (r.dim() != g.dim() || r.cov.rows() != r.dim() || g.cov.rows() != g.dim())
    throw DimensionError("frechet_distance: feature dimensions " + std::to_string(r.dim()) + " vs " +
                         std::to_string(g.dim()));
  psd_sqrt(r.cov, "real covariance");  // validates PSD
  const Eigen::MatrixXd sg = psd_sqrt(g.cov, "generated covariance");
  Eigen::MatrixXd m = sg * r.cov * sg;
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigen-decomposition failed");
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev < kEigenClamp) throw NumericError("covariance product is indefinite (eigenvalue " + std::to_string(ev) + ")");
    tr_sqrt += std::sqrt(std::max(0.0, ev));
  }
  const double fd = (r.mean - g.mean).squaredNorm() + r.cov.trace() + g.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, fd);
}

void register_feature_extractor(const std::string& name, FeatureExtractor fn) {
  Registry& reg = registry();
  std::lock_guard lock(reg.mu);
  reg.table[name] = std::move(fn);
}

const FeatureExtractor& find_feature_extractor(const std::string& name) {
  Registry& reg = registry();
  std::lock_guard lock(reg.mu);
  const auto it = reg.table.find(name);
  if (it == reg.table.end()) throw ConfigError("unknown feature extractor '" + name + "'");
  return it->second;
}

std::vector<std::string> feature_extractor_names() {
  Registry& reg = registry();
  std::lock_guard lock(reg.mu);
  std::vector<std::string> names;
  for (const auto& [k, v] : reg.table) names.push_back(k);
  return names;
}

std::vector<double> extract_features(const SemanticDrawing& d, const std::string& extractor) {
  return find_feature_extractor(extractor)(d);
}

}  // namespace pcdm

#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <string>
#include <vector>

#include "pcdm/drawing.hpp"

namespace pcdm {

inline constexpr std::array<double, kNumClasses> kClassWeights{0.0, 0.4, 0.4, 0.1, 0.1};

struct IoUReport {
  double siou = 0.0;
  double wiou = 0.0;
  double sw_ratio_pred = 0.0;
  double sw_ratio_label = 0.0;
  double eta_sw = 0.0;
  double score = 0.0;
  /// Set when the prediction has no shear-wall ratio to normalise by, so eta is reported as 0.
  bool eta_undefined = false;
};

/// confusion[i][j] = pixels of label class i predicted as class j.
using ConfusionMatrix = std::array<std::array<int64_t, kNumClasses>, kNumClasses>;
ConfusionMatrix confusion_matrix(const SemanticDrawing& pred, const SemanticDrawing& label);

/// Weighted IoU; a class with an empty union contributes 0.
double weighted_iou(const ConfusionMatrix& cm, const std::array<double, kNumClasses>& weights = kClassWeights);
/// Shear walls over all walls; 0 for a drawing without walls.
double shear_wall_ratio(const SemanticDrawing& d);
/// max(0, 1 - |pred - label| / pred). Requires pred > 0.
double eta_sw_ratio(double ratio_pred, double ratio_label);

/// Score = eta * (0.5 SIoU + 0.5 WIoU). SIoU is 0 when neither drawing has shear walls.
IoUReport score_iou(const SemanticDrawing& pred, const SemanticDrawing& label);

struct FeatureCloud {
  int64_t n = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int64_t dim() const { return mean.size(); }
};

/// Sample mean and unbiased covariance (symmetrised). DataError for fewer than 2 vectors.
FeatureCloud fit_feature_cloud(const std::vector<std::vector<double>>& features);

/// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 sqrt(S_g^1/2 S_r S_g^1/2)).
double frechet_distance(const FeatureCloud& r, const FeatureCloud& g);

using FeatureExtractor = std::function<std::vector<double>(const SemanticDrawing&)>;

/// Built-ins: "moments" (default; 5 class fractions then, per class, mean u,
/// mean v, var u, var v of pixel centres in unit coordinates, zeros for absent
/// classes) and "fractions" (the first 5 entries only).
void register_feature_extractor(const std::string& name, FeatureExtractor fn);
const FeatureExtractor& find_feature_extractor(const std::string& name);
std::vector<std::string> feature_extractor_names();
std::vector<double> extract_features(const SemanticDrawing& d, const std::string& extractor = "moments");

}  // namespace pcdm

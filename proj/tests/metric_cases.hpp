#pragma once

#include <array>
#include <string>

#include "pcdm/drawing.hpp"
#include "pcdm/metrics.hpp"

namespace pcdm::testing {

struct MetricCase {
  const char* name;
  std::array<const char*, 8> pred;
  std::array<const char*, 8> label;
  ConfusionMatrix confusion;
  // Exact rationals as numerator / denominator.
  std::array<int, 2> siou, wiou, ratio_pred, ratio_label, eta;
  bool eta_undefined;
};

inline SemanticDrawing parse_grid(const std::array<const char*, 8>& rows) {
  SemanticDrawing d(8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      switch (rows[static_cast<size_t>(y)][x]) {
        case 'S': d.at(x, y) = PixelClass::ShearWall; break;
        case 'I': d.at(x, y) = PixelClass::InfillWall; break;
        case 'W': d.at(x, y) = PixelClass::Window; break;
        case 'G': d.at(x, y) = PixelClass::Gate; break;
        default: break;
      }
    }
  }
  return d;
}

inline double frac(const std::array<int, 2>& f) { return static_cast<double>(f[0]) / static_cast<double>(f[1]); }

// clang-format off
inline const std::array<MetricCase, 5> kMetricCases{{
  {"perfect",
   {"SSSSSSSS", "S......S", "S.IIII.S", "S.I..I.S", "S.I..I.S", "S.IIII.S", "S..WW..S", "SSSGGSSS"},
   {"SSSSSSSS", "S......S", "S.IIII.S", "S.I..I.S", "S.I..I.S", "S.IIII.S", "S..WW..S", "SSSGGSSS"},
   {{{22,0,0,0,0},{0,26,0,0,0},{0,0,12,0,0},{0,0,0,2,0},{0,0,0,0,2}}},
   {1, 1}, {1, 1}, {13, 19}, {13, 19}, {1, 1}, false},
  {"shear_vs_infill",
   {"IIIIIIII", "S......S", "S......S", "SSSIIIII", "S......S", "S......S", "S......S", "IIIGGIII"},
   {"IIIIIIII", "S......I", "S......I", "SSSSSIII", "S......S", "S......S", "S......S", "IIIGGIII"},
   {{{30,0,0,0,0},{0,11,2,0,0},{0,2,17,0,0},{0,0,0,0,0},{0,0,0,0,2}}},
   {11, 15}, {251, 350}, {13, 32}, {13, 32}, {1, 1}, false},
  {"disjoint_shear",
   {"SSSS....", "SSSS....", "........", "IIIIIIII", "........", "....WWWW", "........", "GG......"},
   {"....SSSS", "....SSSS", "........", "IIIIIIII", "........", "....WWWW", "........", "GG......"},
   {{{34,8,0,0,0},{8,0,0,0,0},{0,0,8,0,0},{0,0,0,4,0},{0,0,0,0,2}}},
   {0, 1}, {3, 5}, {1, 2}, {1, 2}, {1, 1}, false},
  {"openings_confused",
   {"WWWWIIII", "S......S", "S......S", "S..SS..S", "S......S", "S......S", "S......S", "GGGGIIII"},
   {"GGWWIIII", "S......S", "I......S", "S..SS..S", "S......S", "S....S.S", "S......S", "WWGGIIII"},
   {{{33,0,0,0,0},{1,13,0,0,0},{0,1,8,0,0},{0,0,0,2,2},{0,0,0,2,2}}},
   {13, 15}, {173, 225}, {7, 11}, {14, 23}, {22, 23}, false},
  {"no_pred_shear",
   {"IIIIIIII", "I......I", "I......I", "IIIIIIII", "........", "........", "........", "........"},
   {"SSSSIIII", "S......I", "S......I", "IIIIIIII", "........", "........", "........", "........"},
   {{{44,0,0,0,0},{0,0,6,0,0},{0,0,14,0,0},{0,0,0,0,0},{0,0,0,0,0}}},
   {0, 1}, {7, 25}, {0, 1}, {3, 10}, {0, 1}, true},
}};
// clang-format on

}  // namespace pcdm::testing

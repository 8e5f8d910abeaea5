#pragma once

#include <array>

namespace sfdet::testing {

struct ScoreRow {
  double known_map;
  double u_recall;
  double h_score;
};

// (known mAP, U-Recall, H-Score) triples from the reported result tables:
// both benchmarks, the ablations and the supplementary sweeps.
inline constexpr std::array<ScoreRow, 34> kReportedScores{{
    {26.56, 0.00, 0.00},   {16.91, 6.02, 8.88},   {12.61, 2.76, 4.53},   {22.97, 3.60, 6.22},
    {26.18, 0.00, 0.00},   {32.32, 10.59, 15.95}, {24.41, 0.00, 0.00},   {26.42, 6.08, 9.89},
    {19.12, 1.98, 3.59},   {17.24, 6.86, 9.82},   {26.68, 1.17, 2.24},   {28.21, 8.57, 13.15},
    {30.63, 3.56, 6.38},   {25.40, 6.46, 10.30},  {22.63, 7.23, 10.96},  {26.98, 7.25, 11.43},
    {32.90, 7.44, 12.14},  {30.33, 8.29, 13.02},  {29.88, 9.65, 14.59},  {28.43, 8.07, 12.57},
    {32.18, 4.00, 7.12},   {29.07, 7.52, 11.95},  {31.84, 7.23, 11.78},  {27.95, 8.27, 12.76},
    {30.77, 8.47, 13.28},  {30.78, 8.09, 12.81},  {31.63, 7.72, 12.41},  {29.51, 7.88, 12.44},
    {32.81, 9.23, 14.41},  {33.45, 7.36, 12.07},  {34.55, 7.11, 11.79},  {42.09, 1.79, 3.43},
    {39.92, 1.98, 3.77},   {45.55, 4.08, 7.49},
}};

struct ClassRow {
  double ap[3];
  double known_map;
};

// Per-class AP columns with the reported known mAP, both benchmarks.
inline constexpr std::array<ClassRow, 12> kReportedClassAp{{
    {{43.20, 12.05, 24.43}, 26.56}, {{50.20, 0.00, 0.54}, 16.91},  {{36.38, 1.45, 0.00}, 12.61},
    {{41.14, 9.65, 18.12}, 22.97},  {{39.82, 13.83, 24.90}, 26.18}, {{52.10, 16.49, 28.37}, 32.32},
    {{51.38, 13.73, 8.13}, 24.41},  {{59.68, 13.04, 6.55}, 26.42},  {{48.56, 6.54, 2.26}, 19.12},
    {{44.91, 4.14, 2.68}, 17.24},   {{52.51, 12.31, 15.21}, 26.68}, {{57.95, 17.27, 9.40}, 28.21},
}};

}  // namespace sfdet::testing

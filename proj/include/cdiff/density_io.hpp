#pragma once

// JSON form of density specs.
//
//   {
//     "d": 1, "d_y": 1,
//     "components": [
//       { "logit_bias": 0.0, "logit_slope": [0.0],
//         "mean_bias": [0.0], "mean_slope": [[1.0]],   // d rows of d_y entries
//         "cov": [[1.0]] }                              // d rows of d entries
//     ],
//     "declared": { "C1": 0.39894, "C2": 1.0, "beta": 2.0, "B": 1.0,
//                   "lambda_min": 1.0, "lambda_max": 1.0 },
//     "fast_rate": { "C2": 1.0, "C": 0.1, "B": 0.5 }    // optional
//   }

#include "cdiff/densities.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>

namespace cdiff {

namespace io {

inline nlohmann::json vec_to_json(const Vec& v) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline nlohmann::json mat_to_json(const Mat& m) {
  auto a = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(row);
  }
  return a;
}

inline Vec vec_from_json(const nlohmann::json& j) {
  require(j.is_array(), "expected a JSON array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

inline Mat mat_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  require(j.is_array() && static_cast<Eigen::Index>(j.size()) == rows,
          "matrix has wrong row count");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols,
            "matrix has wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace io

inline nlohmann::json to_json(const ConditionalDensitySpec& spec) {
  nlohmann::json j;
  j["d"] = spec.dim();
  j["d_y"] = spec.guidance_dim();
  auto comps = nlohmann::json::array();
  for (const auto& c : spec.components()) {
    comps.push_back({{"logit_bias", c.logit_bias},
                     {"logit_slope", io::vec_to_json(c.logit_slope)},
                     {"mean_bias", io::vec_to_json(c.mean_bias)},
                     {"mean_slope", io::mat_to_json(c.mean_slope)},
                     {"cov", io::mat_to_json(c.cov)}});
  }
  j["components"] = comps;
  const auto& dc = spec.declared();
  j["declared"] = {{"C1", dc.C1}, {"C2", dc.C2}, {"beta", dc.beta}, {"B", dc.B},
                   {"lambda_min", dc.lambda_min}};
  if (std::isfinite(dc.lambda_max)) j["declared"]["lambda_max"] = dc.lambda_max;
  return j;
}

inline nlohmann::json to_json(const FastRateDensitySpec& spec) {
  auto j = to_json(spec.base);
  j["fast_rate"] = {{"C2", spec.C2}, {"C", spec.C}, {"B", spec.B}};
  return j;
}

inline ConditionalDensitySpec density_from_json(const nlohmann::json& j) {
  const int d = j.at("d").get<int>();
  const int d_y = j.value("d_y", 0);
  require(d >= 1 && d_y >= 0, "density JSON: bad dimensions");
  std::vector<GaussianComponent> comps;
  for (const auto& jc : j.at("components")) {
    GaussianComponent c;
    c.logit_bias = jc.value("logit_bias", 0.0);
    c.logit_slope = jc.contains("logit_slope") ? io::vec_from_json(jc["logit_slope"]) : Vec::Zero(d_y);
    c.mean_bias = io::vec_from_json(jc.at("mean_bias"));
    c.mean_slope = jc.contains("mean_slope") ? io::mat_from_json(jc["mean_slope"], d, d_y)
                                             : Mat::Zero(d, d_y);
    c.cov = io::mat_from_json(jc.at("cov"), d, d);
    comps.push_back(std::move(c));
  }
  DeclaredConstants dc;
  if (j.contains("declared")) {
    const auto& jd = j["declared"];
    dc.C1 = jd.value("C1", dc.C1);
    dc.C2 = jd.value("C2", dc.C2);
    dc.beta = jd.value("beta", dc.beta);
    dc.B = jd.value("B", dc.B);
    dc.lambda_min = jd.value("lambda_min", dc.lambda_min);
    dc.lambda_max = jd.value("lambda_max", dc.lambda_max);
  }
  return {d, d_y, std::move(comps), dc};
}

inline std::optional<FastRateDensitySpec> fast_rate_from_json(const nlohmann::json& j) {
  if (!j.contains("fast_rate")) return std::nullopt;
  const auto& jf = j["fast_rate"];
  return FastRateDensitySpec{density_from_json(j), jf.value("C2", 1.0), jf.at("C").get<double>(),
                             jf.at("B").get<double>()};
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open " + path);
  return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
}

}  // namespace cdiff

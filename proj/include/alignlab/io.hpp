#pragma once

#include "alignlab/data.hpp"
#include "alignlab/dataset.hpp"
#include "alignlab/diagnostics.hpp"
#include "alignlab/dynamics.hpp"
#include "alignlab/geometry.hpp"
#include "alignlab/xor.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace alignlab {

using Json = nlohmann::json;

/// Filesystem failures while writing artifacts; reported like config errors.
class IoError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Writes through a sibling temp file and renames it over `path`, so readers
/// never see a partial file.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Shortest-exact formatting is left to the JSON writer; CSV uses %.17g.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// JSON building blocks
// ---------------------------------------------------------------------------

/// Non-finite values become null.
inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json to_json(const Vec& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v[i]));
  return out;
}

inline Json to_json(const std::optional<double>& v) { return v ? number(*v) : Json(nullptr); }

inline Vec vec_from_json(const Json& j) {
  if (!j.is_array()) throw DataError("expected a numeric array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw DataError("expected a numeric array");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Json to_json(const Quantiles& q) {
  return {{"min", number(q.min)}, {"q05", number(q.q05)}, {"q50", number(q.q50)},
          {"q95", number(q.q95)}, {"max", number(q.max)}, {"count", q.count}};
}

// ---------------------------------------------------------------------------
// data and geometry
// ---------------------------------------------------------------------------

inline Json to_json(const AssumptionReport& r) {
  Json margins = Json::object();
  for (const auto& m : r.margins) margins[m.name] = number(m.value);
  return {{"id", std::string(to_string(r.id))}, {"satisfied", r.satisfied}, {"margins", margins},
          {"witnesses", r.witnesses}, {"approximate", r.approximate}, {"note", r.note}};
}

inline Json to_json(const Cone& c) {
  Json j = {{"pattern", c.pattern.to_string()},
            {"representative", to_json(c.representative)},
            {"zero_set_dim", c.zero_set_dim}};
  if (c.arc) j["arc"] = {to_json(c.arc->first), to_json(c.arc->second)};
  return j;
}

inline Json to_json(const ExtremalVector& e) {
  return {{"pattern", e.pattern.to_string()},
          {"D", to_json(e.D)},
          {"norm", number(e.D.norm())},
          {"direction", to_json(e.direction())},
          {"kind", std::string(to_string(e.kind))},
          {"proportionality", e.proportionality}};
}

inline Json to_json(const ConeEnumeration& cones, const ExtremalSet& ex) {
  Json cs = Json::array();
  for (const auto& c : cones.cones) cs.push_back(to_json(c));
  Json es = Json::array();
  for (const auto& e : ex.vectors) es.push_back(to_json(e));
  Json gv = Json::array();
  for (const auto& p : ex.genericity_violations) gv.push_back(p.to_string());
  Json sd = Json::array();
  for (const auto& p : ex.saddles) sd.push_back(p.to_string());
  return {{"approximate", cones.approximate || ex.approximate},
          {"pattern_count", cones.cones.size()},
          {"extremal_count", ex.vectors.size()},
          {"cones", cs},
          {"extremals", es},
          {"genericity_violations", gv},
          {"saddles", sd}};
}

/// Flat named map of the scalar constants plus the per-cone table.
inline Json to_json(const AlignmentConstants& k, double lambda) {
  Json constants = {{"D_max", number(k.d_max)},
                    {"D_min", number(k.d_min)},
                    {"D_min_independent", number(k.d_min_independent)},
                    {"alpha_min", number(k.alpha_min)},
                    {"alpha_min_plus", number(k.alpha_min_plus)},
                    {"alpha_min_minus", number(k.alpha_min_minus)},
                    {"delta_0", number(k.delta_0)},
                    {"delta_0_prime", number(k.delta_0_prime)},
                    {"delta_0_second", number(k.delta_0_second)},
                    {"alpha_0", number(k.alpha_0)},
                    {"epsilon", number(k.epsilon)},
                    {"lambda", number(lambda)},
                    {"tau", number(k.tau(k.epsilon, lambda))},
                    {"lambda_star", number(k.lambda_star_value)}};
  Json cones = Json::array();
  for (const auto& c : k.cones) {
    cones.push_back({{"pattern", c.pattern.to_string()},
                     {"D", to_json(c.D)},
                     {"norm", number(c.norm)},
                     {"contains_zero", c.contains_zero},
                     {"meets_cone", c.meets_cone},
                     {"meets_negative_cone", c.meets_negative_cone},
                     {"extremal", c.extremal()},
                     {"sigma_min_z", number(c.sigma_min_z)},
                     {"eta_margin", number(c.eta_margin)},
                     {"max_cosine", number(c.max_cosine)},
                     {"min_cosine", number(c.min_cosine)}});
  }
  return {{"constants", constants}, {"cones", cones}};
}

// ---------------------------------------------------------------------------
// dynamics
// ---------------------------------------------------------------------------

inline Json to_json(const NetworkState& s) {
  Json w = Json::array();
  for (int j = 0; j < s.m(); ++j) w.push_back(to_json(Vec(s.w.row(j).transpose())));
  return {{"t", s.t}, {"step", s.step_count}, {"a", to_json(s.a)}, {"w", w}};
}

inline NetworkState network_from_json(const Json& j) {
  NetworkState s;
  s.a = vec_from_json(j.at("a"));
  const auto& w = j.at("w");
  if (!w.is_array() || w.size() != static_cast<std::size_t>(s.a.size())) {
    throw DataError("snapshot \"w\" must have one row per output weight");
  }
  const int d = w.empty() ? 0 : static_cast<int>(w[0].size());
  s.w.resize(s.a.size(), d);
  for (std::size_t j2 = 0; j2 < w.size(); ++j2) {
    const Vec row = vec_from_json(w[j2]);
    if (row.size() != d) throw DataError("snapshot rows have different lengths");
    s.w.row(static_cast<Eigen::Index>(j2)) = row.transpose();
  }
  s.t = j.at("t").get<double>();
  s.step_count = j.at("step").get<std::int64_t>();
  return s;
}

/// Trace CSV: one row per snapshot.
inline std::string trace_csv(const Trace& trace) {
  std::string out = "step,time,loss,sum_a2_pos,sum_a2_neg,max_balance_drift\n";
  for (const auto& s : trace.snapshots) {
    out += std::to_string(s.step) + ',' + format_double(s.time) + ',' + format_double(s.loss) + ',' +
           format_double(s.sum_a2_pos) + ',' + format_double(s.sum_a2_neg) + ',' +
           format_double(s.max_balance_drift) + '\n';
  }
  return out;
}

/// Long-format per-neuron CSV; cos_to_Dstar is empty for zero weights.
inline std::string neuron_csv(const Trace& trace, const Vec& d_star, std::int64_t every_step = 1) {
  std::string out = "step,neuron,a,w_norm,cos_to_Dstar\n";
  for (const auto& snap : trace.snapshots) {
    if (every_step > 1 && snap.step % every_step != 0 && &snap != &trace.last()) continue;
    const NetworkState s = snap.network();
    for (int j = 0; j < s.m(); ++j) {
      const Vec w = s.w.row(j).transpose();
      const double nrm = w.norm();
      out += std::to_string(snap.step) + ',' + std::to_string(j) + ',' + format_double(s.a[j]) + ',' +
             format_double(nrm) + ',' + (nrm > 0.0 ? format_double(cosine(w, d_star)) : std::string()) + '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

inline Json to_json(const NeuronClassification& c) {
  return {{"positive", c.positive}, {"negative", c.negative}, {"rest", c.rest}, {"degenerate", c.degenerate}};
}

inline Json to_json(const PhaseReport& r) {
  Json j = {{"epsilon", r.epsilon},
            {"eps_2", r.eps_2},
            {"eps_3", r.eps_3},
            {"lambda", r.lambda},
            {"tau_theory", number(r.tau_theory)},
            {"tau", to_json(r.tau)},
            {"tau_2", to_json(r.tau_2)},
            {"tau_3", to_json(r.tau_3)},
            {"counts",
             {{"positive", r.classification.positive.size()},
              {"negative", r.classification.negative.size()},
              {"rest", r.classification.rest.size()},
              {"degenerate", r.classification.degenerate.size()}}},
            {"negative_mass_max_increase", number(r.negative_mass_max_increase)},
            {"frozen_violations", r.frozen_violations},
            {"record_stride_ok", r.record_stride_ok},
            {"warnings", r.warnings}};
  if (r.at_tau) {
    const auto& a = *r.at_tau;
    j["at_tau"] = {{"time", a.time},
                   {"cosine_to_d_star", to_json(a.cosine_to_d_star)},
                   {"min_inner_ratio", number(a.min_inner_ratio)},
                   {"min_growth_ratio", number(a.min_growth_ratio)},
                   {"max_growth_ratio", number(a.max_growth_ratio)},
                   {"growth_low", number(a.growth_low)},
                   {"growth_high", number(a.growth_high)},
                   {"growth_violations", a.growth_violations},
                   {"max_norm_ratio", number(a.max_norm_ratio)},
                   {"negative_violations", a.negative_violations}};
  } else {
    j["at_tau"] = nullptr;
  }
  if (r.at_tau_2) {
    const auto& g = *r.at_tau_2;
    j["at_tau_2"] = {{"time", g.time},
                     {"positive_mass", number(g.positive_mass)},
                     {"min_correlation", number(g.min_correlation)},
                     {"min_pairwise_cosine", number(g.min_pairwise_cosine)},
                     {"negative_violations", g.negative_violations}};
  } else {
    j["at_tau_2"] = nullptr;
  }
  if (r.at_tau_3) {
    const auto& g = *r.at_tau_3;
    j["at_tau_3"] = {{"time", g.time},
                     {"beta_gap", number(g.beta_gap)},
                     {"min_correlation", number(g.min_correlation)},
                     {"min_pairwise_cosine", number(g.min_pairwise_cosine)},
                     {"negative_violations", g.negative_violations}};
  } else {
    j["at_tau_3"] = nullptr;
  }
  Json mixed = Json::array();
  for (const auto& v : r.mixed_mass) mixed.push_back({number(v.time), number(v.value)});
  j["mixed_mass"] = mixed;
  return j;
}

inline Json to_json(const Check& c) {
  return {{"name", c.name}, {"passed", c.passed}, {"value", number(c.value)}, {"threshold", number(c.threshold)}};
}

inline Json to_json(const SpuriousReport& r) {
  Json checks = Json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  Json hist = Json::object();
  for (const auto& [k, v] : r.cone_histogram) hist[k] = v;
  return {{"passed", r.passed()},
          {"beta_star", to_json(r.beta_star)},
          {"residuals", to_json(r.residuals)},
          {"final_loss", number(r.final_loss)},
          {"loss_star", number(r.loss_star)},
          {"interpolation_failed", r.interpolation_failed},
          {"linear_network", r.linear_network},
          {"mixed_neurons", r.mixed_neurons},
          {"mixed_mass", number(r.mixed_mass)},
          {"checks", checks},
          {"cone_histogram", hist},
          {"note", r.note}};
}

// ---------------------------------------------------------------------------
// xor
// ---------------------------------------------------------------------------

inline Json to_json(const IdentityCheck& c) {
  return {{"name", c.name},
          {"expected_sign", c.expected_sign},
          {"estimate", number(c.estimate)},
          {"std_error", number(c.std_error)},
          {"z", number(c.z)},
          {"verdict", std::string(to_string(c.verdict))}};
}

inline Json to_json(const SignStructureReport& r) {
  Json checks = Json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  return {{"w", to_json(r.w)},
          {"D", to_json(r.estimate.mean)},
          {"std_error", to_json(r.estimate.std_error)},
          {"checks", checks},
          {"all_hold", r.all_hold()}};
}

inline Json to_json(const XorExtremalReport& r) {
  Json cands = Json::array();
  for (const auto& c : r.candidates) {
    cands.push_back({{"w", to_json(c.w)},
                     {"D", to_json(c.D)},
                     {"std_error", to_json(c.std_error)},
                     {"cosine", number(c.cosine)},
                     {"expected_orientation", c.expected_orientation},
                     {"proportional", c.proportional},
                     {"offplane_zero", c.offplane_zero},
                     {"passed", c.passed}});
  }
  Json others = Json::array();
  for (const auto& o : r.others) {
    others.push_back({{"w", to_json(o.w)},
                      {"residual", number(o.residual)},
                      {"noise_floor", number(o.noise_floor)},
                      {"chi2", number(o.chi2)},
                      {"chi2_threshold", number(o.chi2_threshold)},
                      {"rejected", o.rejected}});
  }
  return {{"d", r.config.d},
          {"n_samples", r.config.n_samples},
          {"seed", r.config.seed},
          {"extremal_count", r.extremal_count()},
          {"passed", r.passed()},
          {"candidates", cands},
          {"others", others}};
}

inline Json to_json(const QuadratureAgreement& q) {
  return {{"angle", q.angle},
          {"mc", to_json(q.mc)},
          {"std_error", to_json(q.std_error)},
          {"quadrature", to_json(q.quadrature)},
          {"max_abs_z", number(q.max_abs_z)},
          {"agrees", q.agrees}};
}

}  // namespace alignlab

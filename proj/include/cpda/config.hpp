#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "cpda/errors.hpp"
#include "cpda/kalman.hpp"
#include "cpda/vfp.hpp"

namespace cpda {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// enum <-> string
// ---------------------------------------------------------------------------

inline std::string to_string(FilterVariant v) {
  switch (v) {
    case FilterVariant::Etkf: return "etkf";
    case FilterVariant::Etkfp: return "etkfp";
    case FilterVariant::Etkfa: return "etkfa";
    case FilterVariant::Letkf: return "letkf";
    case FilterVariant::Letkfp: return "letkfp";
    case FilterVariant::Letkfa: return "letkfa";
    case FilterVariant::Vfp: return "vfp";
    case FilterVariant::VfpStab: return "vfpstab";
    case FilterVariant::VfpDae: return "vfpdae";
  }
  return "?";
}

inline FilterVariant filter_variant_from(const std::string& s, const std::string& key) {
  for (FilterVariant v :
       {FilterVariant::Etkf, FilterVariant::Etkfp, FilterVariant::Etkfa, FilterVariant::Letkf,
        FilterVariant::Letkfp, FilterVariant::Letkfa, FilterVariant::Vfp, FilterVariant::VfpStab,
        FilterVariant::VfpDae})
    if (to_string(v) == s) return v;
  throw ConfigError(key, "unknown filter variant '" + s + "'");
}

inline bool is_flow_variant(FilterVariant v) {
  return v == FilterVariant::Vfp || v == FilterVariant::VfpStab || v == FilterVariant::VfpDae;
}

inline std::string to_string(SdeIntegrator s) {
  return s == SdeIntegrator::EulerMaruyama ? "euler-maruyama" : "rosenbrock-em";
}

inline SdeIntegrator sde_integrator_from(const std::string& s, const std::string& key) {
  if (s == "euler-maruyama") return SdeIntegrator::EulerMaruyama;
  if (s == "rosenbrock-em") return SdeIntegrator::RosenbrockEm;
  throw ConfigError(key, "unknown integrator '" + s + "'");
}

inline std::string to_string(DaeScheme s) { return dae_scheme_name(s); }

inline DaeScheme dae_scheme_from(const std::string& s, const std::string& key) {
  for (DaeScheme d : {DaeScheme::AnchorAtX0, DaeScheme::EvolveProject, DaeScheme::RosenbrockProject,
                      DaeScheme::Eliminated})
    if (dae_scheme_name(d) == s) return d;
  throw ConfigError(key, "unknown dae scheme '" + s + "'");
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct FlowSettings {
  double pseudo_step = 1e-3;
  double stop_tol = 1e-6;
  int max_steps = 1000;
  SdeIntegrator integrator = SdeIntegrator::EulerMaruyama;
  DaeScheme dae_scheme = DaeScheme::EvolveProject;
  double gamma = 0.0;
  std::optional<double> perturbed_obs_scale;
  bool warm_start_etkf_projected = false;
};

struct FilterSettings {
  FilterVariant variant = FilterVariant::Etkf;
  double inflation = 1.0;
  double r_g_scale = 1e-3;            // R^g = r_g_scale * I_{n_c}
  double localization_radius = 0.0;   // required by L variants
  double projection_tol = 1e-10;
  int projection_max_iter = 50;
  FlowSettings flow;
};

struct ModelSettings {
  std::string id;  // pendulum | kdv | ns2d
  Json params;     // model-specific keys with defaults filled by the builder
};

struct Seeds {
  std::uint64_t truth = 0;
  std::uint64_t obs_noise = 0;
  std::uint64_t ensemble_init = 0;
  std::uint64_t flow = 0;
};

struct ExperimentConfig {
  ModelSettings model;
  FilterSettings filter;
  int cycles = 0;
  int spinup = 0;
  int ensemble_size = 0;
  Seeds seeds;
  std::string metric_scaling = "default";
  Json metric_scaling_values;  // used when metric_scaling == "custom"
  std::string output_dir = "results";
  std::string tag = "experiment";

  FlowConfig flow_config() const {
    FlowConfig fc;
    fc.pseudo_step = filter.flow.pseudo_step;
    fc.stop_tol = filter.flow.stop_tol;
    fc.max_steps = filter.flow.max_steps;
    fc.integrator = filter.flow.integrator;
    fc.dae_scheme = filter.flow.dae_scheme;
    fc.stabilization_gamma = filter.flow.gamma;
    fc.perturbed_obs_scale = filter.flow.perturbed_obs_scale;
    fc.seed = seeds.flow;
    fc.projection_tol = filter.projection_tol;
    fc.projection_max_iter = filter.projection_max_iter;
    return fc;
  }
};

namespace detail {

template <typename T>
T require(const Json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) throw ConfigError(path + key, "missing required key");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(path + key, e.what());
  }
}

template <typename T>
T get_or(const Json& j, const std::string& key, T fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(path + key, e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
  ExperimentConfig cfg;
  if (!j.contains("model")) throw ConfigError("model", "missing required key");
  cfg.model.id = detail::require<std::string>(j.at("model"), "id", "model.");
  if (cfg.model.id != "pendulum" && cfg.model.id != "kdv" && cfg.model.id != "ns2d")
    throw ConfigError("model.id", "unknown model '" + cfg.model.id + "'");
  cfg.model.params = j.at("model");
  cfg.model.params.erase("id");

  if (!j.contains("filter")) throw ConfigError("filter", "missing required key");
  const Json& jf = j.at("filter");
  cfg.filter.variant =
      filter_variant_from(detail::require<std::string>(jf, "variant", "filter."), "filter.variant");
  cfg.filter.inflation = detail::get_or(jf, "inflation", 1.0, "filter.");
  cfg.filter.r_g_scale = detail::get_or(jf, "r_g_scale", 1e-3, "filter.");
  cfg.filter.localization_radius = detail::get_or(jf, "localization_radius", 0.0, "filter.");
  cfg.filter.projection_tol = detail::get_or(jf, "projection_tol", 1e-10, "filter.");
  cfg.filter.projection_max_iter = detail::get_or(jf, "projection_max_iter", 50, "filter.");
  if (jf.contains("flow")) {
    const Json& jw = jf.at("flow");
    FlowSettings& fl = cfg.filter.flow;
    fl.pseudo_step = detail::get_or(jw, "pseudo_step", fl.pseudo_step, "filter.flow.");
    fl.stop_tol = detail::get_or(jw, "stop_tol", fl.stop_tol, "filter.flow.");
    fl.max_steps = detail::get_or(jw, "max_steps", fl.max_steps, "filter.flow.");
    fl.integrator = sde_integrator_from(
        detail::get_or<std::string>(jw, "integrator", "euler-maruyama", "filter.flow."),
        "filter.flow.integrator");
    fl.dae_scheme = dae_scheme_from(
        detail::get_or<std::string>(jw, "dae_scheme", "evolve-project", "filter.flow."),
        "filter.flow.dae_scheme");
    fl.gamma = detail::get_or(jw, "gamma", 0.0, "filter.flow.");
    if (jw.contains("perturbed_obs_scale"))
      fl.perturbed_obs_scale = jw.at("perturbed_obs_scale").get<double>();
    const std::string ws =
        detail::get_or<std::string>(jw, "warm_start", "none", "filter.flow.");
    if (ws != "none" && ws != "etkf-projected")
      throw ConfigError("filter.flow.warm_start", "must be 'none' or 'etkf-projected'");
    fl.warm_start_etkf_projected = ws == "etkf-projected";
  }

  cfg.cycles = detail::require<int>(j, "cycles", "");
  cfg.spinup = detail::require<int>(j, "spinup", "");
  cfg.ensemble_size = detail::require<int>(j, "ensemble_size", "");
  if (cfg.cycles < 1) throw ConfigError("cycles", "must be positive");
  if (cfg.spinup < 0 || cfg.spinup >= cfg.cycles)
    throw ConfigError("spinup", "spinup must satisfy 0 <= spinup < cycles");
  if (cfg.ensemble_size < 2) throw ConfigError("ensemble_size", "need at least 2 members");

  if (!j.contains("seeds")) throw ConfigError("seeds", "missing required key (all seeds explicit)");
  const Json& js = j.at("seeds");
  cfg.seeds.truth = detail::require<std::uint64_t>(js, "truth", "seeds.");
  cfg.seeds.obs_noise = detail::require<std::uint64_t>(js, "obs_noise", "seeds.");
  cfg.seeds.ensemble_init = detail::require<std::uint64_t>(js, "ensemble_init", "seeds.");
  cfg.seeds.flow = detail::get_or<std::uint64_t>(js, "flow", 0, "seeds.");
  if (is_flow_variant(cfg.filter.variant) && !js.contains("flow"))
    throw ConfigError("seeds.flow", "flow variants require an explicit flow seed");

  if (j.contains("metric_scaling")) {
    if (j.at("metric_scaling").is_array()) {
      cfg.metric_scaling = "custom";
      cfg.metric_scaling_values = j.at("metric_scaling");
    } else {
      cfg.metric_scaling = j.at("metric_scaling").get<std::string>();
    }
  }

  if (j.contains("output")) {
    cfg.output_dir = detail::get_or<std::string>(j.at("output"), "dir", "results", "output.");
    cfg.tag = detail::get_or<std::string>(j.at("output"), "tag", "experiment", "output.");
  }
  return cfg;
}

inline Json serialize_config(const ExperimentConfig& cfg) {
  Json j;
  j["model"] = cfg.model.params;
  j["model"]["id"] = cfg.model.id;
  Json jf;
  jf["variant"] = to_string(cfg.filter.variant);
  jf["inflation"] = cfg.filter.inflation;
  jf["r_g_scale"] = cfg.filter.r_g_scale;
  jf["localization_radius"] = cfg.filter.localization_radius;
  jf["projection_tol"] = cfg.filter.projection_tol;
  jf["projection_max_iter"] = cfg.filter.projection_max_iter;
  Json jw;
  jw["pseudo_step"] = cfg.filter.flow.pseudo_step;
  jw["stop_tol"] = cfg.filter.flow.stop_tol;
  jw["max_steps"] = cfg.filter.flow.max_steps;
  jw["integrator"] = to_string(cfg.filter.flow.integrator);
  jw["dae_scheme"] = to_string(cfg.filter.flow.dae_scheme);
  jw["gamma"] = cfg.filter.flow.gamma;
  if (cfg.filter.flow.perturbed_obs_scale)
    jw["perturbed_obs_scale"] = *cfg.filter.flow.perturbed_obs_scale;
  jw["warm_start"] = cfg.filter.flow.warm_start_etkf_projected ? "etkf-projected" : "none";
  jf["flow"] = jw;
  j["filter"] = jf;
  j["cycles"] = cfg.cycles;
  j["spinup"] = cfg.spinup;
  j["ensemble_size"] = cfg.ensemble_size;
  j["seeds"] = {{"truth", cfg.seeds.truth},
                {"obs_noise", cfg.seeds.obs_noise},
                {"ensemble_init", cfg.seeds.ensemble_init},
                {"flow", cfg.seeds.flow}};
  if (cfg.metric_scaling == "custom")
    j["metric_scaling"] = cfg.metric_scaling_values;
  else
    j["metric_scaling"] = cfg.metric_scaling;
  j["output"] = {{"dir", cfg.output_dir}, {"tag", cfg.tag}};
  return j;
}

}  // namespace cpda

/*
 *   Copyright 2026 The fewha authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "fewha/geometry.hpp"

namespace fewha {

// Config file format: UTF-8 JSON with top-level keys telescope, wfs,
// guide_stars, layers, dms, solver, loop (+ optional evaluation, simulation).
// Full schema in docs/config-schema.md.

namespace detail {

using nlohmann::json;

template <typename T>
T get_required(const json& j, const std::string& key, const std::string& ctx) {
    if (!j.contains(key)) throw config_error("config: missing key '" + key + "' in " + ctx);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw config_error("config: bad value for '" + key + "' in " + ctx + ": " + e.what());
    }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

// Angles are accepted as <name>_rad or <name>_arcsec; radians are canonical.
inline std::pair<double, double> get_direction(const json& j, const std::string& ctx) {
    if (j.contains("direction_rad")) {
        auto v = j.at("direction_rad").get<std::vector<double>>();
        if (v.size() != 2) throw config_error("config: direction_rad needs 2 entries in " + ctx);
        return {v[0], v[1]};
    }
    if (j.contains("direction_arcsec")) {
        auto v = j.at("direction_arcsec").get<std::vector<double>>();
        if (v.size() != 2) throw config_error("config: direction_arcsec needs 2 entries in " + ctx);
        return {v[0] * kArcsecToRad, v[1] * kArcsecToRad};
    }
    throw config_error("config: missing direction_rad / direction_arcsec in " + ctx);
}

}  // namespace detail

inline SystemGeometry geometry_from_json(const nlohmann::json& j) {
    using detail::get_or;
    using detail::get_required;
    SystemGeometry g;

    const auto& tel = j.at("telescope");
    g.telescope_diameter = get_required<double>(tel, "diameter", "telescope");
    g.obstruction_fraction = get_or(tel, "obstruction_fraction", 0.0);
    const std::string sem = get_or<std::string>(tel, "obstruction_semantics", "area");
    if (sem == "area")
        g.obstruction_semantics = ObstructionSemantics::area;
    else if (sem == "diameter")
        g.obstruction_semantics = ObstructionSemantics::diameter;
    else
        throw config_error("config: obstruction_semantics must be 'area' or 'diameter'");
    g.illumination_threshold = get_or(tel, "illumination_threshold", 0.5);

    for (const auto& jw : j.at("wfs")) {
        WfsConfig w;
        w.n_subap = get_required<int>(jw, "n_subap", "wfs");
        w.noise_variance = get_required<double>(jw, "noise_variance", "wfs");
        g.wfs.push_back(std::move(w));
    }

    for (const auto& js : j.at("guide_stars")) {
        GuideStar s;
        const std::string kind = get_required<std::string>(js, "kind", "guide_stars");
        if (kind == "ngs")
            s.kind = StarKind::ngs;
        else if (kind == "lgs")
            s.kind = StarKind::lgs;
        else
            throw config_error("config: guide star kind must be 'ngs' or 'lgs'");
        std::tie(s.theta_x, s.theta_y) = detail::get_direction(js, "guide_stars");
        s.height = s.kind == StarKind::lgs ? get_required<double>(js, "height", "lgs guide star")
                                           : kInfiniteHeight;
        g.guide_stars.push_back(s);
    }

    for (const auto& jl : j.at("layers")) {
        LayerConfig l;
        l.height = get_required<double>(jl, "height", "layers");
        l.grid_order = get_required<int>(jl, "grid_order", "layers");
        l.relative_strength = get_required<double>(jl, "relative_strength", "layers");
        l.extent = get_or(jl, "extent", 0.0);
        g.layers.push_back(l);
    }

    for (const auto& jd : j.at("dms")) {
        DmConfig d;
        d.n_act = get_required<int>(jd, "n_act", "dms");
        d.conjugation_height = get_required<double>(jd, "conjugation_height", "dms");
        g.dms.push_back(d);
    }

    const auto& sol = j.at("solver");
    g.solver.pcg_max_iter = get_required<int>(sol, "pcg_max_iter", "solver");
    g.solver.pcg_tolerance = get_or(sol, "pcg_tolerance", 0.0);
    g.solver.alpha = get_required<double>(sol, "alpha", "solver");
    g.solver.wavelet_order = get_or(sol, "wavelet_order", 3);
    g.solver.outer_scale = get_or(sol, "outer_scale", 25.0);
    g.solver.spectral_exponent = get_or(sol, "spectral_exponent", 11.0 / 6.0);
    const std::string pm = get_or<std::string>(sol, "preconditioner", "approximate");
    if (pm == "exact")
        g.solver.precond_mode = PrecondMode::exact;
    else if (pm == "approximate")
        g.solver.precond_mode = PrecondMode::approximate;
    else if (pm == "balanced")
        g.solver.precond_mode = PrecondMode::balanced;
    else
        throw config_error("config: preconditioner must be 'exact', 'approximate' or 'balanced'");
    g.solver.precond_coarse_weight = get_or(sol, "precond_coarse_weight", 4.0);
    g.solver.precond_balance_exponent = get_or(sol, "precond_balance_exponent", 0.5);
    g.solver.dense_size_cap = get_or<std::size_t>(sol, "dense_size_cap", 20000);
    g.solver.fault = get_or<std::string>(sol, "fault", "");

    const auto& loop = j.at("loop");
    const std::string mode = get_required<std::string>(loop, "mode", "loop");
    if (mode == "closed")
        g.loop_mode = LoopMode::closed;
    else if (mode == "open")
        g.loop_mode = LoopMode::open;
    else
        throw config_error("config: loop mode must be 'closed' or 'open'");
    g.gain = get_required<double>(loop, "gain", "loop");

    if (j.contains("evaluation")) {
        const auto& ev = j.at("evaluation");
        g.evaluation.n_per_side = get_or(ev, "n_per_side", 5);
        if (ev.contains("half_width_rad"))
            g.evaluation.half_width = ev.at("half_width_rad").get<double>();
        else if (ev.contains("half_width_arcsec"))
            g.evaluation.half_width = ev.at("half_width_arcsec").get<double>() * kArcsecToRad;
    }

    if (j.contains("simulation")) {
        const auto& sim = j.at("simulation");
        g.simulation.truth_strength = get_or(sim, "truth_strength", 1.0);
        g.simulation.noise = get_or(sim, "noise", true);
        if (sim.contains("wind_m_per_step")) {
            for (const auto& wv : sim.at("wind_m_per_step")) {
                auto v = wv.get<std::vector<double>>();
                if (v.size() != 2) throw config_error("config: wind entries need 2 components");
                g.simulation.wind.emplace_back(v[0], v[1]);
            }
        }
    }

    finalize_geometry(g);
    return g;
}

inline SystemGeometry load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config: parse error in '" + path + "': " + e.what());
    }
    try {
        return geometry_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config: malformed '" + path + "': " + e.what());
    }
}

inline nlohmann::json geometry_to_json(const SystemGeometry& g) {
    nlohmann::json j;
    j["telescope"] = {
        {"diameter", g.telescope_diameter},
        {"obstruction_fraction", g.obstruction_fraction},
        {"obstruction_semantics",
         g.obstruction_semantics == ObstructionSemantics::area ? "area" : "diameter"},
        {"illumination_threshold", g.illumination_threshold},
    };
    j["wfs"] = nlohmann::json::array();
    for (const auto& w : g.wfs)
        j["wfs"].push_back({{"n_subap", w.n_subap}, {"noise_variance", w.noise_variance}});
    j["guide_stars"] = nlohmann::json::array();
    for (const auto& s : g.guide_stars) {
        nlohmann::json js = {{"kind", s.kind == StarKind::lgs ? "lgs" : "ngs"},
                             {"direction_rad", {s.theta_x, s.theta_y}}};
        if (s.kind == StarKind::lgs) js["height"] = s.height;
        j["guide_stars"].push_back(std::move(js));
    }
    j["layers"] = nlohmann::json::array();
    for (const auto& l : g.layers)
        j["layers"].push_back({{"height", l.height},
                               {"grid_order", l.grid_order},
                               {"relative_strength", l.relative_strength},
                               {"extent", l.extent}});
    j["dms"] = nlohmann::json::array();
    for (const auto& d : g.dms)
        j["dms"].push_back({{"n_act", d.n_act}, {"conjugation_height", d.conjugation_height}});
    j["solver"] = {
        {"pcg_max_iter", g.solver.pcg_max_iter},
        {"pcg_tolerance", g.solver.pcg_tolerance},
        {"alpha", g.solver.alpha},
        {"wavelet_order", g.solver.wavelet_order},
        {"outer_scale", g.solver.outer_scale},
        {"spectral_exponent", g.solver.spectral_exponent},
        {"preconditioner", g.solver.precond_mode == PrecondMode::exact        ? "exact"
                           : g.solver.precond_mode == PrecondMode::balanced   ? "balanced"
                                                                              : "approximate"},
        {"precond_coarse_weight", g.solver.precond_coarse_weight},
        {"precond_balance_exponent", g.solver.precond_balance_exponent},
        {"dense_size_cap", g.solver.dense_size_cap},
    };
    if (!g.solver.fault.empty()) j["solver"]["fault"] = g.solver.fault;
    j["loop"] = {{"mode", g.loop_mode == LoopMode::closed ? "closed" : "open"}, {"gain", g.gain}};
    j["evaluation"] = {{"n_per_side", g.evaluation.n_per_side},
                       {"half_width_rad", g.evaluation.half_width}};
    j["simulation"] = {{"truth_strength", g.simulation.truth_strength},
                       {"noise", g.simulation.noise}};
    if (!g.simulation.wind.empty()) {
        auto& w = j["simulation"]["wind_m_per_step"] = nlohmann::json::array();
        for (const auto& [wx, wy] : g.simulation.wind) w.push_back({wx, wy});
    }
    return j;
}

inline void save_config(const SystemGeometry& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("config: cannot write '" + path + "'");
    out << geometry_to_json(g).dump(2) << "\n";
}

}  // namespace fewha

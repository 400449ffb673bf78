#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "relief/detection.hpp"
#include "relief/integration.hpp"
#include "relief/light_calibration.hpp"
#include "relief/ps_solver.hpp"
#include "relief/statistics.hpp"

namespace relief {

inline void save_lights_json(const LightSet& set,
                             const std::filesystem::path& path) {
    nlohmann::json j;
    j["residual"] = set.residual;
    j["converged"] = set.converged;
    j["lights"] = nlohmann::json::array();
    for (const auto& l : set.lights) {
        j["lights"].push_back({{"azimuth_deg", l.azimuth_deg()},
                               {"elevation_deg", l.elevation_deg()},
                               {"direction", {l.direction[0], l.direction[1],
                                              l.direction[2]}}});
    }
    std::ofstream out(path);
    if (!out) throw input_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline LightSet load_lights_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open " + path.string());
    nlohmann::json j;
    in >> j;
    LightSet set;
    set.residual = j.value("residual", 0.0);
    set.converged = j.value("converged", true);
    for (const auto& l : j.at("lights")) {
        LightVector v;
        v.direction = cv::Vec3d(l.at("direction")[0], l.at("direction")[1],
                                l.at("direction")[2]);
        set.lights.push_back(v);
    }
    return set;
}

/// normals.tif: 3 x 16-bit channels, [-1,1] mapped to [0,65535].
inline void save_normals(const NormalMap& normals,
                         const std::filesystem::path& tif_path,
                         const std::filesystem::path& validity_path) {
    cv::Mat3w enc(normals.vectors.size());
    for (int y = 0; y < enc.rows; ++y)
        for (int x = 0; x < enc.cols; ++x) {
            cv::Vec3f n = normals.vectors(y, x);
            cv::Vec3w& e = enc(y, x);
            for (int c = 0; c < 3; ++c) {
                double v = (n[c] + 1.0) * 0.5 * 65535.0;
                e[c] = static_cast<uint16_t>(
                    std::lround(std::min(65535.0, std::max(0.0, v))));
            }
        }
    if (!cv::imwrite(tif_path.string(), enc))
        throw input_error("cannot write " + tif_path.string());
    if (!cv::imwrite(validity_path.string(), normals.validity))
        throw input_error("cannot write " + validity_path.string());
}

inline NormalMap load_normals(const std::filesystem::path& tif_path,
                              const std::filesystem::path& validity_path) {
    cv::Mat enc = cv::imread(tif_path.string(), cv::IMREAD_UNCHANGED);
    if (enc.empty() || enc.type() != CV_16UC3)
        throw input_error("cannot read normal map: " + tif_path.string());
    NormalMap normals;
    normals.vectors.create(enc.size());
    for (int y = 0; y < enc.rows; ++y)
        for (int x = 0; x < enc.cols; ++x) {
            cv::Vec<uint16_t, 3> e = enc.at<cv::Vec<uint16_t, 3>>(y, x);
            cv::Vec3f n;
            for (int c = 0; c < 3; ++c)
                n[c] = static_cast<float>(e[c] / 65535.0 * 2.0 - 1.0);
            float len = std::sqrt(n.dot(n));
            normals.vectors(y, x) = len > 0 ? cv::Vec3f(n / len) : cv::Vec3f(0, 0, 1);
        }
    cv::Mat v = cv::imread(validity_path.string(), cv::IMREAD_GRAYSCALE);
    if (v.empty() || v.size() != enc.size())
        throw input_error("cannot read validity mask: " + validity_path.string());
    normals.validity = v > 0;
    return normals;
}

/// depth.tif: single-channel 32-bit float, micrometres.
inline void save_depth(const DepthMap& depth,
                       const std::filesystem::path& path) {
    cv::Mat1f f;
    depth.z_um.convertTo(f, CV_32F);
    if (!cv::imwrite(path.string(), f))
        throw input_error("cannot write " + path.string());
}

inline DepthMap load_depth(const std::filesystem::path& path) {
    cv::Mat f = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (f.empty() || f.type() != CV_32FC1)
        throw input_error("cannot read depth map: " + path.string());
    DepthMap d;
    f.convertTo(d.z_um, CV_64F);
    return d;
}

inline void save_protrusions_csv(const ProtrusionSet& set,
                                 const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot write " + path.string());
    out << "id,x,y,area_px,width_um,peak_um,source,region\n";
    char buf[256];
    for (const auto& r : set.records) {
        std::snprintf(buf, sizeof buf, "%d,%.3f,%.3f,%d,%.3f,%.3f,%s,%d\n",
                      r.id, r.centroid_x, r.centroid_y, r.area_px,
                      r.equivalent_width_um, r.peak_height_um,
                      to_string(r.source), r.region_label);
        out << buf;
    }
}

inline ProtrusionSet load_protrusions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open " + path.string());
    ProtrusionSet set;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ProtrusionRecord r;
        char source[32] = {0};
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%d,%lf,%lf,%31[^,],%d",
                        &r.id, &r.centroid_x, &r.centroid_y, &r.area_px,
                        &r.equivalent_width_um, &r.peak_height_um, source,
                        &r.region_label) != 8)
            throw input_error("bad record in " + path.string() + ": " + line);
        std::string s = source;
        r.source = s == "manual"   ? Source::Manual
                   : s == "albedo" ? Source::Albedo
                   : s == "depth"  ? Source::Depth
                                   : Source::Union;
        set.records.push_back(r);
    }
    return set;
}

inline nlohmann::json stats_to_json(const std::vector<RegionStats>& stats) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : stats) {
        arr.push_back({{"region_label", s.region_label},
                       {"region_name", s.region_name},
                       {"region_area_cm2", s.region_area_cm2},
                       {"count", s.count},
                       {"count_per_cm2", s.count_per_cm2},
                       {"bin_edges_um", s.bin_edges_um},
                       {"histogram", s.histogram}});
    }
    return arr;
}

inline void save_stats_json(const std::vector<RegionStats>& stats,
                            const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot write " + path.string());
    out << stats_to_json(stats).dump(2) << "\n";
}

inline void save_histogram_csv(const std::vector<RegionStats>& stats,
                               const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot write " + path.string());
    out << "region,region_name,bin_lo_um,bin_hi_um,count,count_per_cm2\n";
    char buf[256];
    for (const auto& s : stats) {
        for (size_t b = 0; b < s.histogram.size(); ++b) {
            std::snprintf(buf, sizeof buf, "%d,%s,%.1f,%.1f,%d,%.6f\n",
                          s.region_label, s.region_name.c_str(),
                          s.bin_edges_um[b], s.bin_edges_um[b + 1],
                          s.histogram[b],
                          s.region_area_cm2 > 0
                              ? s.histogram[b] / s.region_area_cm2
                              : 0.0);
            out << buf;
        }
    }
}

/// Grouped bar chart of per-region width histograms, one band per region.
inline void save_histogram_svg(const std::vector<RegionStats>& stats,
                               const std::filesystem::path& path) {
    const int band_w = 360, band_h = 120, margin = 40;
    int width = band_w + 2 * margin;
    int height = margin + static_cast<int>(stats.size()) * (band_h + margin);
    std::ofstream out(path);
    if (!out) throw input_error("cannot write " + path.string());
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
        << "' height='" << std::max(height, band_h) << "'>\n";
    int top = margin;
    for (const auto& s : stats) {
        double peak = 1e-9;
        for (size_t b = 0; b < s.histogram.size(); ++b)
            peak = std::max(peak, s.region_area_cm2 > 0
                                      ? s.histogram[b] / s.region_area_cm2
                                      : 0.0);
        int nb = static_cast<int>(s.histogram.size());
        double bw = static_cast<double>(band_w) / std::max(1, nb);
        out << "<text x='" << margin << "' y='" << top - 8 << "' font-size='12'>"
            << s.region_name << " (" << s.count_per_cm2 << "/cm2)</text>\n";
        for (int b = 0; b < nb; ++b) {
            double d = s.region_area_cm2 > 0 ? s.histogram[b] / s.region_area_cm2
                                             : 0.0;
            double h = band_h * d / peak;
            out << "<rect x='" << margin + b * bw << "' y='"
                << top + band_h - h << "' width='" << bw * 0.9 << "' height='"
                << h << "' fill='steelblue'/>\n";
        }
        top += band_h + margin;
    }
    out << "</svg>\n";
}

/// Detections outlined on the albedo: automated in red, manual-only in
/// yellow.
inline void save_overlay(const cv::Mat1f& albedo, const cv::Mat1b& auto_mask,
                         const cv::Mat1b& manual_mask,
                         const std::filesystem::path& path) {
    double minv, maxv;
    cv::minMaxLoc(albedo, &minv, &maxv);
    cv::Mat1b gray;
    albedo.convertTo(gray, CV_8U, maxv > minv ? 255.0 / (maxv - minv) : 255.0,
                     maxv > minv ? -255.0 * minv / (maxv - minv) : 0.0);
    cv::Mat3b canvas;
    cv::cvtColor(gray, canvas, cv::COLOR_GRAY2BGR);

    std::vector<std::vector<cv::Point>> contours;
    if (!manual_mask.empty()) {
        cv::Mat1b manual_only = manual_mask & ~auto_mask;
        cv::findContours(manual_only, contours, cv::RETR_EXTERNAL,
                         cv::CHAIN_APPROX_SIMPLE);
        cv::drawContours(canvas, contours, -1, cv::Scalar(0, 255, 255), 1);
    }
    cv::findContours(auto_mask.clone(), contours, cv::RETR_EXTERNAL,
                     cv::CHAIN_APPROX_SIMPLE);
    cv::drawContours(canvas, contours, -1, cv::Scalar(0, 0, 255), 1);
    if (!cv::imwrite(path.string(), canvas))
        throw input_error("cannot write " + path.string());
}

inline nlohmann::json comparison_to_json(const MethodComparison& cmp) {
    nlohmann::json j;
    j["rank_correlation"] = cmp.rank_correlation;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : cmp.rows)
        j["rows"].push_back({{"region_label", r.region_label},
                             {"region_name", r.region_name},
                             {"density_a", r.density_a},
                             {"density_b", r.density_b},
                             {"ratio", r.ratio}});
    return j;
}

}  // namespace relief

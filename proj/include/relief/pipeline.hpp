#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "relief/detection.hpp"
#include "relief/export.hpp"
#include "relief/integration.hpp"
#include "relief/light_calibration.hpp"
#include "relief/ps_solver.hpp"
#include "relief/raster.hpp"
#include "relief/statistics.hpp"

namespace relief {

struct RunConfig {
    std::filesystem::path manifest;
    std::filesystem::path region_mask;  // optional; whole frame when empty
    std::filesystem::path manual_mask;  // optional
    std::filesystem::path out_dir;
    int poly_degree = 2;
    RefineOptions refine;
    DetectionParams detection;
    double bin_width_um = 100.0;
    bool write_mesh = false;
    bool write_flatfield = false;
    uint64_t seed = 0;
    int threads = 1;
};

namespace detail {

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot hash missing file: " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        EVP_DigestUpdate(ctx, buf, static_cast<size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

struct StageTimer {
    nlohmann::json& timings;
    std::string stage;
    std::chrono::steady_clock::time_point start =
        std::chrono::steady_clock::now();
    ~StageTimer() {
        timings[stage] =
            std::chrono::duration<double, std::milli>(
                std::chrono::steady_clock::now() - start)
                .count();
    }
};

}  // namespace detail

/// Runs calibrate -> solve -> integrate -> detect -> stats end to end,
/// writing every stage product plus report.json into out_dir. A failing
/// stage leaves a "<stage>.partial" marker and rethrows.
inline nlohmann::json run(const RunConfig& config) {
    namespace fs = std::filesystem;
    set_thread_count(config.threads);
    cv::setNumThreads(1);  // determinism across --threads settings
    fs::create_directories(config.out_dir);

    nlohmann::json report;
    report["version"] = kVersion;
    report["seed"] = config.seed;
    report["threads"] = config.threads;
    report["parameters"] = {
        {"poly_degree", config.poly_degree},
        {"bin_width_um", config.bin_width_um},
        {"threshold_window", config.detection.threshold_window},
        {"threshold_sigmas", config.detection.threshold_sigmas},
        {"ncc_min", config.detection.ncc_min},
        {"min_prominence_um", config.detection.min_prominence_um},
        {"min_area_px", config.detection.min_area_px},
        {"init_elevation_deg", config.refine.init_elevation_deg},
    };
    nlohmann::json& timings = report["timings_ms"] = nlohmann::json::object();

    std::string stage = "load";
    auto partial_marker = [&] {
        std::ofstream(config.out_dir / (stage + ".partial")) << stage << "\n";
    };

    try {
        ImageStack stack;
        {
            detail::StageTimer t{timings, stage};
            stack = load_stack(config.manifest);
        }
        RegionPartition partition;
        if (!config.region_mask.empty()) {
            partition = load_region_partition(
                config.region_mask, cv::Size(stack.width(), stack.height()));
        } else {
            partition.labels = cv::Mat1i(stack.height(), stack.width(), 1);
            partition.region_names = {"full_frame"};
        }

        stage = "calibrate";
        LightSet lights;
        ImageStack flat;
        {
            detail::StageTimer t{timings, stage};
            std::tie(lights, flat) = calibrate(stack, config.poly_degree,
                                               config.refine);
        }
        save_lights_json(lights, config.out_dir / "lights.json");
        if (config.write_flatfield)
            for (int i = 0; i < flat.count(); ++i)
                save_gray16(flat.images[i],
                            config.out_dir /
                                ("flatfield_" + std::to_string(i) + ".tif"));
        report["residual"] = lights.residual;

        stage = "solve";
        NormalMap normals;
        AlbedoMap albedo;
        {
            detail::StageTimer t{timings, stage};
            std::tie(normals, albedo) = solve_ps(flat, lights);
            if (!stack.color_reference.empty())
                albedo.colored = colorize_albedo(albedo, stack.color_reference);
        }
        save_normals(normals, config.out_dir / "normals.tif",
                     config.out_dir / "validity.png");
        save_gray16(albedo.k, config.out_dir / "albedo.tif");

        stage = "integrate";
        DepthMap depth;
        {
            detail::StageTimer t{timings, stage};
            GradientField grad = normals_to_gradients(normals);
            depth = integrate_frankot_chellappa(grad, stack.pixel_pitch_um);
        }
        save_depth(depth, config.out_dir / "depth.tif");
        if (config.write_mesh)
            export_mesh(depth, stack.pixel_pitch_um,
                        config.out_dir / "mesh.ply");

        stage = "detect";
        ProtrusionSet detections;
        cv::Mat1b albedo_mask, depth_mask, manual_bin;
        {
            detail::StageTimer t{timings, stage};
            albedo_mask = albedo_candidates(albedo.k, config.detection);
            depth_mask =
                depth_candidates(depth, stack.pixel_pitch_um, config.detection);
            detections = fuse_and_label(albedo_mask, depth_mask, partition,
                                        stack.pixel_pitch_um, &depth,
                                        config.detection);
        }
        save_protrusions_csv(detections, config.out_dir / "protrusions.csv");

        std::optional<ProtrusionSet> manual;
        if (!config.manual_mask.empty()) {
            cv::Mat m = cv::imread(config.manual_mask.string(),
                                   cv::IMREAD_GRAYSCALE);
            if (m.empty())
                throw input_error("cannot read manual mask: " +
                                  config.manual_mask.string());
            manual_bin = m > 0;
            manual = ingest_manual(manual_bin, partition, stack.pixel_pitch_um,
                                   &depth, config.detection);
            save_protrusions_csv(*manual,
                                 config.out_dir / "protrusions_manual.csv");
        }
        cv::Mat1b fused;
        cv::bitwise_or(albedo_mask, depth_mask, fused);
        save_overlay(albedo.k, fused, manual_bin,
                     config.out_dir / "overlay.png");

        stage = "stats";
        {
            detail::StageTimer t{timings, stage};
            auto stats = compute_stats(detections, partition,
                                       stack.pixel_pitch_um,
                                       config.bin_width_um);
            save_stats_json(stats, config.out_dir / "stats.json");
            save_histogram_csv(stats, config.out_dir / "histogram.csv");
            save_histogram_svg(stats, config.out_dir / "histogram.svg");
            if (manual) {
                auto manual_stats = compute_stats(*manual, partition,
                                                  stack.pixel_pitch_um,
                                                  config.bin_width_um);
                save_stats_json(manual_stats,
                                config.out_dir / "stats_manual.json");
                auto cmp = compare_methods(manual_stats, stats);
                std::ofstream out(config.out_dir / "comparison.json");
                out << comparison_to_json(cmp).dump(2) << "\n";
            }
        }
    } catch (...) {
        partial_marker();
        throw;
    }

    nlohmann::json& digests = report["digests"] = nlohmann::json::object();
    for (const auto& entry : std::filesystem::directory_iterator(config.out_dir)) {
        auto name = entry.path().filename().string();
        if (name == "report.json" || !entry.is_regular_file()) continue;
        digests[name] = detail::sha256_file(entry.path());
    }
    std::ofstream out(config.out_dir / "report.json");
    out << report.dump(2) << "\n";
    return report;
}

}  // namespace relief

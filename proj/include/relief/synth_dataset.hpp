#pragma once

#include <filesystem>
#include <fstream>

#include "relief/export.hpp"
#include "relief/raster.hpp"
#include "relief/synthetic.hpp"

namespace relief {

/// Renders a scene spec into a stack consumable by the rest of the pipeline:
/// numbered 16-bit TIFFs, manifest.json, ground_truth.json, and regions.png
/// when the spec defines a region grid. Exposure is normalized so the
/// brightest rendered sample lands at 0.8 of full scale.
inline nlohmann::json write_synthetic_dataset(
    const nlohmann::json& spec, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    SyntheticScene scene = make_scene(spec);

    nlohmann::json lcfg = spec.value("lights", nlohmann::json::object());
    int count = lcfg.value("count", 12);
    double elevation = lcfg.value("elevation_deg", 45.0);
    double distance =
        lcfg.value("distance_um",
                   1.0 * scene.width_px * scene.pitch_um);  // near-light
    double az0 = lcfg.value("azimuth_start_deg", 0.0);
    auto lights = ring_of_lights(scene, count, elevation, distance, az0);

    RenderOptions ropt;
    ropt.noise_sigma = spec.value("noise_sigma", 0.0);
    ropt.seed = spec.value("seed", 0);

    std::vector<cv::Mat1f> rendered;
    double peak = 0;
    for (size_t i = 0; i < lights.size(); ++i) {
        RenderOptions per = ropt;
        per.seed = ropt.seed + i;
        rendered.push_back(render(scene, lights[i], per));
        double minv, maxv;
        cv::minMaxLoc(rendered.back(), &minv, &maxv);
        peak = std::max(peak, maxv);
    }
    double scale = peak > 0 ? 0.8 / peak : 1.0;

    nlohmann::json manifest;
    manifest["pixel_pitch_um"] = scene.pitch_um;
    manifest["images"] = nlohmann::json::array();
    for (size_t i = 0; i < rendered.size(); ++i) {
        std::string name = "light_" + std::to_string(i) + ".tif";
        save_gray16(rendered[i] * scale, out_dir / name);
        manifest["images"].push_back(name);
    }
    std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << "\n";

    if (!scene.region_labels.empty()) {
        cv::Mat1b mask(scene.region_labels.size());
        for (int y = 0; y < mask.rows; ++y)
            for (int x = 0; x < mask.cols; ++x)
                mask(y, x) = static_cast<uchar>(scene.region_labels(y, x) * 20);
        cv::imwrite((out_dir / "regions.png").string(), mask);
    }

    nlohmann::json truth;
    truth["pitch_um"] = scene.pitch_um;
    truth["exposure_scale"] = scale;
    truth["seed"] = ropt.seed;
    truth["lights"] = nlohmann::json::array();
    for (const auto& l : lights) {
        cv::Vec3d d = true_direction(scene, l);
        truth["lights"].push_back(
            {{"position_um", {l.position_um[0], l.position_um[1],
                              l.position_um[2]}},
             {"direction", {d[0], d[1], d[2]}},
             {"elevation_deg", std::asin(d[2]) * 180.0 / std::numbers::pi},
             {"azimuth_deg",
              std::atan2(d[1], d[0]) * 180.0 / std::numbers::pi}});
    }
    truth["protrusions"] = nlohmann::json::array();
    for (const auto& p : scene.protrusions)
        truth["protrusions"].push_back(
            {{"id", p.id},
             {"x_px", p.center_x_px},
             {"y_px", p.center_y_px},
             {"width_um", p.width_um},
             {"height_um", p.height_um},
             {"shape", p.shape == BumpShape::Caldera ? "caldera" : "dome"}});
    std::ofstream(out_dir / "ground_truth.json") << truth.dump(2) << "\n";
    return truth;
}

}  // namespace relief

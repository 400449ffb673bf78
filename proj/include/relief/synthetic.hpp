#pragma once

#include <opencv2/core.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "relief/common.hpp"
#include "relief/raster.hpp"

namespace relief {

enum class BumpShape { Dome, Caldera };

struct PlantedProtrusion {
    int id = 0;
    double center_x_px = 0, center_y_px = 0;
    double width_um = 0;   // footprint diameter
    double height_um = 0;  // dome apex height
    BumpShape shape = BumpShape::Dome;
    double albedo_boost = 0;  // extra fluorescence contrast at the apex
};

struct BrushTexture {
    double amplitude_um = 0;
    double wavelength_um = 300;
    double angle_deg = 0;
};

/// Ground-truth scene: analytic heightfield (sum of bumps and sinusoidal
/// brush texture) plus an albedo field; gradients are exact.
struct SyntheticScene {
    int width_px = 0, height_px = 0;
    double pitch_um = 15.0;
    double base_albedo = 0.6;
    std::vector<PlantedProtrusion> protrusions;
    BrushTexture texture;
    cv::Mat1i region_labels;  // optional partition, empty when unused

    /// Height and its (dz/dX, dz/dY) at world micrometre coordinates.
    void height_and_gradient(double X, double Y, double& z, double& gx,
                             double& gy) const {
        z = gx = gy = 0;
        if (texture.amplitude_um > 0) {
            double a = texture.angle_deg * std::numbers::pi / 180.0;
            double u = X * std::cos(a) + Y * std::sin(a);
            double w = 2.0 * std::numbers::pi / texture.wavelength_um;
            z += texture.amplitude_um * std::sin(w * u);
            double dz = texture.amplitude_um * w * std::cos(w * u);
            gx += dz * std::cos(a);
            gy += dz * std::sin(a);
        }
        for (const auto& p : protrusions) {
            double dx = X - p.center_x_px * pitch_um;
            double dy = Y - p.center_y_px * pitch_um;
            double r = p.width_um / 2.0;
            double rho2 = dx * dx + dy * dy;
            if (rho2 < r * r) {  // truncated paraboloid dome
                z += p.height_um * (1.0 - rho2 / (r * r));
                gx += -2.0 * p.height_um * dx / (r * r);
                gy += -2.0 * p.height_um * dy / (r * r);
            }
            if (p.shape == BumpShape::Caldera) {  // central pit, rim stays high
                double sp = r / 3.0;
                double pit = 0.5 * p.height_um * std::exp(-rho2 / (2 * sp * sp));
                z -= pit;
                gx += pit * dx / (sp * sp);
                gy += pit * dy / (sp * sp);
            }
        }
    }

    double albedo_at(double x_px, double y_px) const {
        double k = base_albedo;
        for (const auto& p : protrusions) {
            if (p.albedo_boost <= 0) continue;
            double dx = (x_px - p.center_x_px) * pitch_um;
            double dy = (y_px - p.center_y_px) * pitch_um;
            double s = p.width_um / 4.0;  // bright core covering the bump
            k += p.albedo_boost * std::exp(-(dx * dx + dy * dy) / (2 * s * s));
        }
        return k;
    }

    cv::Mat1d heightfield_um() const {
        cv::Mat1d z(height_px, width_px);
        for (int y = 0; y < height_px; ++y)
            for (int x = 0; x < width_px; ++x) {
                double h, gx, gy;
                height_and_gradient(x * pitch_um, y * pitch_um, h, gx, gy);
                z(y, x) = h;
            }
        return z;
    }

    cv::Mat1f albedo_map() const {
        cv::Mat1f k(height_px, width_px);
        for (int y = 0; y < height_px; ++y)
            for (int x = 0; x < width_px; ++x)
                k(y, x) = static_cast<float>(albedo_at(x, y));
        return k;
    }
};

struct SceneLight {
    cv::Vec3d position_um;  // world coordinates, z above the surface
};

/// Builds a scene from its JSON description (see the synth subcommand).
inline SyntheticScene make_scene(const nlohmann::json& spec) {
    SyntheticScene scene;
    scene.width_px = spec.at("width_px").get<int>();
    scene.height_px = spec.at("height_px").get<int>();
    scene.pitch_um = spec.value("pitch_um", 15.0);
    scene.base_albedo = spec.value("base_albedo", 0.6);
    if (scene.width_px <= 0 || scene.height_px <= 0 || scene.pitch_um <= 0)
        throw input_error("bad scene dimensions");

    if (spec.contains("texture")) {
        const auto& t = spec["texture"];
        scene.texture.amplitude_um = t.value("amplitude_um", 0.0);
        scene.texture.wavelength_um = t.value("wavelength_um", 300.0);
        scene.texture.angle_deg = t.value("angle_deg", 0.0);
    }
    int next_id = 1;
    for (const auto& p : spec.value("protrusions", nlohmann::json::array())) {
        PlantedProtrusion pp;
        pp.id = next_id++;
        pp.center_x_px = p.at("x_px").get<double>();
        pp.center_y_px = p.at("y_px").get<double>();
        pp.width_um = p.at("width_um").get<double>();
        pp.height_um = p.at("height_um").get<double>();
        pp.albedo_boost = p.value("albedo_boost", 0.0);
        if (p.value("shape", "dome") == std::string("caldera"))
            pp.shape = BumpShape::Caldera;
        if (pp.width_um < 2 * scene.pitch_um)
            throw input_error("protrusion narrower than two pixels");
        double r_px = pp.width_um / (2 * scene.pitch_um);
        if (pp.center_x_px - r_px < 0 || pp.center_y_px - r_px < 0 ||
            pp.center_x_px + r_px >= scene.width_px ||
            pp.center_y_px + r_px >= scene.height_px)
            throw input_error("protrusion placed outside the grid");
        scene.protrusions.push_back(pp);
    }

    // optional rows x cols region grid covering the full frame
    if (spec.contains("region_grid")) {
        int rows = spec["region_grid"].value("rows", 1);
        int cols = spec["region_grid"].value("cols", 1);
        scene.region_labels = cv::Mat1i(scene.height_px, scene.width_px);
        for (int y = 0; y < scene.height_px; ++y)
            for (int x = 0; x < scene.width_px; ++x) {
                int ry = std::min(rows - 1, y * rows / scene.height_px);
                int rx = std::min(cols - 1, x * cols / scene.width_px);
                scene.region_labels(y, x) = ry * cols + rx + 1;
            }
    }
    return scene;
}

struct RenderOptions {
    double exposure = 1.0;     // multiplied into k * cos / r^2
    double noise_sigma = 0.0;  // additive Gaussian, fraction of mean intensity
    uint64_t seed = 0;
};

/// Lambertian near-light render: I = exposure * k * max(0, N.l) / r^2 with
/// per-pixel light direction and distance. Normals come from the analytic
/// gradients. No cast shadows or interreflections.
inline cv::Mat1f render(const SyntheticScene& scene, const SceneLight& light,
                        const RenderOptions& opt = {}) {
    double zmin, zmax;
    cv::minMaxLoc(scene.heightfield_um(), &zmin, &zmax);
    if (light.position_um[2] <= zmax)
        throw input_error("light at or below the surface");

    cv::Mat1f img(scene.height_px, scene.width_px);
    parallel_rows(scene.height_px, [&](int r0, int r1) {
        for (int y = r0; y < r1; ++y) {
            for (int x = 0; x < scene.width_px; ++x) {
                double X = x * scene.pitch_um, Y = y * scene.pitch_um;
                double z, gx, gy;
                scene.height_and_gradient(X, Y, z, gx, gy);
                double nn = std::sqrt(gx * gx + gy * gy + 1.0);
                cv::Vec3d n(-gx / nn, -gy / nn, 1.0 / nn);
                cv::Vec3d l = light.position_um - cv::Vec3d(X, Y, z);
                double r2 = l.dot(l);
                double r = std::sqrt(r2);
                double cosine = std::max(0.0, n.dot(l) / r);
                img(y, x) = static_cast<float>(
                    opt.exposure * scene.albedo_at(x, y) * cosine / r2);
            }
        }
    });
    if (opt.noise_sigma > 0) {
        double mean = cv::mean(img)[0];
        std::mt19937_64 rng(opt.seed);
        std::normal_distribution<double> dist(0.0, opt.noise_sigma * mean);
        for (int y = 0; y < scene.height_px; ++y)
            for (int x = 0; x < scene.width_px; ++x)
                img(y, x) = static_cast<float>(
                    std::max(0.0, img(y, x) + dist(rng)));
    }
    return img;
}

/// Evenly spaced ring of point lights around the field center.
inline std::vector<SceneLight> ring_of_lights(const SyntheticScene& scene,
                                              int count, double elevation_deg,
                                              double distance_um,
                                              double azimuth_start_deg = 0) {
    std::vector<SceneLight> lights;
    double cx = 0.5 * (scene.width_px - 1) * scene.pitch_um;
    double cy = 0.5 * (scene.height_px - 1) * scene.pitch_um;
    double el = elevation_deg * std::numbers::pi / 180.0;
    for (int i = 0; i < count; ++i) {
        double az = (azimuth_start_deg + 360.0 * i / count) *
                    std::numbers::pi / 180.0;
        lights.push_back({cv::Vec3d(cx + distance_um * std::cos(el) * std::cos(az),
                                    cy + distance_um * std::cos(el) * std::sin(az),
                                    distance_um * std::sin(el))});
    }
    return lights;
}

/// Unit direction from the field center to the light; the reference value
/// the calibration is judged against.
inline cv::Vec3d true_direction(const SyntheticScene& scene,
                                const SceneLight& light) {
    double cx = 0.5 * (scene.width_px - 1) * scene.pitch_um;
    double cy = 0.5 * (scene.height_px - 1) * scene.pitch_um;
    cv::Vec3d d = light.position_um - cv::Vec3d(cx, cy, 0);
    return d / cv::norm(d);
}

}  // namespace relief

// Acceptance checks for the complete toolkit. Each test case prints an
// explicit PASS/FAIL line for its criterion in addition to the assertions.

#include <catch2/catch_amalgamated.hpp>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "relief/pipeline.hpp"
#include "relief/synth_dataset.hpp"

using namespace relief;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string name;
    bool ok = true;
    std::vector<std::string> notes;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            notes.push_back(what);
        }
        CHECK(cond);
    }
    ~Criterion() {
        std::cout << name << ": " << (ok ? "PASS" : "FAIL") << "\n";
        for (const auto& n : notes) std::cout << "    failed: " << n << "\n";
        std::cout.flush();
    }
};

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double angle_diff_deg(double a, double b) {
    double d = std::abs(a - b);
    return std::min(d, 360.0 - d);
}

/// Far-light Lambertian stack from the scene's analytic normals.
ImageStack far_light_stack(const SyntheticScene& scene, const LightSet& set,
                           double noise_frac = 0.0, uint64_t seed = 0) {
    ImageStack stack;
    stack.pixel_pitch_um = scene.pitch_um;
    for (const auto& light : set.lights) {
        cv::Mat1f img(scene.height_px, scene.width_px);
        for (int y = 0; y < scene.height_px; ++y)
            for (int x = 0; x < scene.width_px; ++x) {
                double z, gx, gy;
                scene.height_and_gradient(x * scene.pitch_um,
                                          y * scene.pitch_um, z, gx, gy);
                double nn = std::sqrt(gx * gx + gy * gy + 1.0);
                cv::Vec3d n(-gx / nn, -gy / nn, 1.0 / nn);
                img(y, x) = static_cast<float>(
                    scene.albedo_at(x, y) *
                    std::max(0.0, n.dot(light.direction)));
            }
        if (noise_frac > 0) {
            double mean = cv::mean(img)[0];
            std::mt19937_64 rng(seed);
            std::normal_distribution<double> dist(0.0, noise_frac * mean);
            for (int y = 0; y < img.rows; ++y)
                for (int x = 0; x < img.cols; ++x)
                    img(y, x) = static_cast<float>(
                        std::max(0.0, img(y, x) + dist(rng)));
        }
        stack.images.push_back(img);
    }
    return stack;
}

/// 20 bumps over a 2x2 region grid with per-quadrant densities 8/6/4/2.
nlohmann::json detection_scene(bool with_bumps) {
    nlohmann::json spec = {{"width_px", 512},
                           {"height_px", 512},
                           {"pitch_um", 15.0},
                           {"base_albedo", 0.6},
                           {"texture",
                            {{"amplitude_um", 3.0},
                             {"wavelength_um", 300.0},
                             {"angle_deg", 25.0}}},
                           {"region_grid", {{"rows", 2}, {"cols", 2}}}};
    spec["protrusions"] = nlohmann::json::array();
    if (!with_bumps) return spec;

    struct B { double x, y, w, h; };
    std::vector<B> bumps;
    auto add = [&](double qx, double qy, int count) {
        // jittered grid inside one 256 px quadrant
        std::mt19937 rng(static_cast<uint32_t>(qx * 2 + qy + 1));
        std::uniform_real_distribution<double> jitter(-18.0, 18.0);
        std::uniform_real_distribution<double> wd(100.0, 400.0);
        std::uniform_real_distribution<double> hd(20.0, 80.0);
        int placed = 0;
        for (int gy = 0; gy < 3 && placed < count; ++gy)
            for (int gx = 0; gx < 3 && placed < count; ++gx) {
                double x = qx * 256 + 48 + gx * 80 + jitter(rng);
                double y = qy * 256 + 48 + gy * 80 + jitter(rng);
                bumps.push_back({x, y, wd(rng), hd(rng)});
                ++placed;
            }
    };
    add(0, 0, 8);
    add(1, 0, 6);
    add(0, 1, 4);
    add(1, 1, 2);
    for (const auto& b : bumps)
        spec["protrusions"].push_back({{"x_px", b.x},
                                       {"y_px", b.y},
                                       {"width_um", b.w},
                                       {"height_um", b.h},
                                       {"albedo_boost", 0.15}});
    return spec;
}

}  // namespace

TEST_CASE("criterion 1: azimuth recovery, 24 lights, 15-degree steps") {
    Criterion crit{"criterion 1 (azimuth recovery, 1 deg, < 5 s at 1024^2)"};
    set_thread_count(8);
    cv::setNumThreads(1);

    SyntheticScene scene;
    scene.width_px = 1024;
    scene.height_px = 1024;
    scene.pitch_um = 15.0;
    scene.base_albedo = 0.6;
    double field = scene.width_px * scene.pitch_um;
    auto lights = ring_of_lights(scene, 24, 45.0, 1.0 * field);

    std::vector<cv::Mat1f> images;
    for (const auto& l : lights) images.push_back(render(scene, l));

    auto t0 = std::chrono::steady_clock::now();
    double max_err = 0;
    for (int i = 0; i < 24; ++i) {
        PolySurface fit = fit_polynomial_surface(images[i], 2);
        double est = estimate_azimuth(fit);
        cv::Vec3d td = true_direction(scene, lights[i]);
        double truth = rad2deg(std::atan2(td[1], td[0]));
        if (truth < 0) truth += 360;
        max_err = std::max(max_err, angle_diff_deg(est, truth));
    }
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    crit.require(max_err <= 1.0, "azimuth error " + std::to_string(max_err) +
                                     " deg exceeds 1 deg");
    crit.require(secs < 5.0,
                 "azimuth recovery took " + std::to_string(secs) + " s");
}

TEST_CASE("criterion 2: light refinement on a 12-light oracle scene") {
    Criterion crit{"criterion 2 (elevations within 3 deg, cost non-increasing, < 60 s at 1024^2)"};
    set_thread_count(8);
    cv::setNumThreads(1);

    SyntheticScene scene;
    scene.width_px = 1024;
    scene.height_px = 1024;
    scene.pitch_um = 15.0;
    scene.base_albedo = 0.6;
    PlantedProtrusion p;
    p.id = 1;
    p.center_x_px = 512;
    p.center_y_px = 512;
    p.width_um = 4000;
    p.height_um = 600;
    scene.protrusions.push_back(p);

    double field = scene.width_px * scene.pitch_um;
    auto lights = ring_of_lights(scene, 12, 45.0, 1.0 * field);
    ImageStack stack;
    stack.pixel_pitch_um = scene.pitch_um;
    for (const auto& l : lights) stack.images.push_back(render(scene, l));

    auto t0 = std::chrono::steady_clock::now();
    auto [set, flat] = calibrate(stack);
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();

    double max_elev_err = 0;
    for (int i = 0; i < 12; ++i) {
        cv::Vec3d td = true_direction(scene, lights[i]);
        double truth = rad2deg(std::asin(td[2]));
        max_elev_err = std::max(
            max_elev_err, std::abs(set.lights[i].elevation_deg() - truth));
    }
    bool non_increasing = true;
    for (size_t t = 1; t < set.cost_history.size(); ++t)
        if (set.cost_history[t] > set.cost_history[t - 1] + 1e-12)
            non_increasing = false;

    crit.require(max_elev_err <= 3.0, "elevation error " +
                                          std::to_string(max_elev_err) +
                                          " deg exceeds 3 deg");
    crit.require(non_increasing, "cost history increased between iterates");
    crit.require(secs < 60.0,
                 "calibration took " + std::to_string(secs) + " s");
}

TEST_CASE("criterion 3: photometric-stereo accuracy on the oracle dome") {
    Criterion crit{"criterion 3 (normals < 2 deg median, albedo < 2%; < 5 deg at 1% noise)"};
    set_thread_count(8);
    cv::setNumThreads(1);

    SyntheticScene scene;
    scene.width_px = 256;
    scene.height_px = 256;
    scene.pitch_um = 15.0;
    scene.base_albedo = 0.6;
    PlantedProtrusion p;
    p.id = 1;
    p.center_x_px = 128;
    p.center_y_px = 128;
    p.width_um = 2400;
    p.height_um = 360;
    scene.protrusions.push_back(p);

    LightSet set;
    for (int i = 0; i < 12; ++i)
        set.lights.push_back(LightVector::from_angles(30.0 * i, 45.0));

    auto median_err = [&](double noise, uint64_t seed, double* albedo_err) {
        ImageStack stack = far_light_stack(scene, set, noise, seed);
        auto [normals, albedo] = solve_ps(stack, set);
        std::vector<double> errs;
        double worst_albedo = 0;
        double r_px = 0.5 * 2400 / scene.pitch_um;
        for (int y = 0; y < 256; ++y)
            for (int x = 0; x < 256; ++x) {
                if (!normals.validity(y, x)) continue;
                double z, gx, gy;
                scene.height_and_gradient(x * scene.pitch_um,
                                          y * scene.pitch_um, z, gx, gy);
                double nn = std::sqrt(gx * gx + gy * gy + 1.0);
                cv::Vec3d truth(-gx / nn, -gy / nn, 1.0 / nn);
                double d = std::clamp(
                    cv::Vec3d(normals.vectors(y, x)).dot(truth), -1.0, 1.0);
                errs.push_back(rad2deg(std::acos(d)));
                double dx = x - 128, dy = y - 128;
                if (dx * dx + dy * dy < 0.8 * 0.8 * r_px * r_px)
                    worst_albedo = std::max(
                        worst_albedo,
                        std::abs(albedo.k(y, x) - scene.base_albedo) /
                            scene.base_albedo);
            }
        if (albedo_err) *albedo_err = worst_albedo;
        auto mid = errs.begin() + errs.size() / 2;
        std::nth_element(errs.begin(), mid, errs.end());
        return *mid;
    };

    double albedo_err = 0;
    double clean = median_err(0.0, 0, &albedo_err);
    double noisy = median_err(0.01, 42, nullptr);
    crit.require(clean < 2.0, "noiseless median normal error " +
                                  std::to_string(clean) + " deg");
    crit.require(albedo_err < 0.02, "albedo error " +
                                        std::to_string(100 * albedo_err) + "%");
    crit.require(noisy < 5.0, "1%-noise median normal error " +
                                  std::to_string(noisy) + " deg");
}

TEST_CASE("criterion 4: integration exactness and feature fidelity") {
    Criterion crit{"criterion 4 (periodic RMSE < 1e-6, invariants 1e-9, FWHM within 1 px)"};
    set_thread_count(8);
    cv::setNumThreads(1);

    {  // periodic analytic gradients
        const int W = 256, H = 256;
        const double A = 100.0, pitch = 15.0;
        cv::Mat1d truth(H, W);
        GradientField g;
        g.p = cv::Mat1d(H, W);
        g.q = cv::Mat1d(H, W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double ax = 2.0 * std::numbers::pi * 5 * x / W;
                double ay = 2.0 * std::numbers::pi * 3 * y / H;
                truth(y, x) = A * std::sin(ax) * std::cos(ay);
                g.p(y, x) = A * (2.0 * std::numbers::pi * 5 / W) *
                            std::cos(ax) * std::cos(ay) / pitch;
                g.q(y, x) = -A * (2.0 * std::numbers::pi * 3 / H) *
                            std::sin(ax) * std::sin(ay) / pitch;
            }
        truth -= cv::mean(truth)[0];
        DepthMap d = integrate_frankot_chellappa(g, pitch, Boundary::Periodic);
        double rm = cv::norm(d.z_um, truth, cv::NORM_L2) / std::sqrt(double(W) * H);
        crit.require(rm < 1e-6 * A, "periodic reconstruction RMSE " +
                                        std::to_string(rm / A) + " of amplitude");
    }

    {  // idempotence + linearity
        auto gauss = [&](double amp, double sigma) {
            DepthMap d;
            d.z_um = cv::Mat1d(96, 96);
            for (int y = 0; y < 96; ++y)
                for (int x = 0; x < 96; ++x)
                    d.z_um(y, x) = amp * std::exp(-((x - 47.5) * (x - 47.5) +
                                                    (y - 47.5) * (y - 47.5)) /
                                                  (2 * sigma * sigma));
            d.z_um -= cv::mean(d.z_um)[0];
            return d;
        };
        const double pitch = 15.0;
        DepthMap z0 = gauss(120.0, 8.0);
        DepthMap z1 = integrate_frankot_chellappa(
            depth_to_gradients_spectral(z0, pitch), pitch);
        crit.require(cv::norm(z1.z_um, z0.z_um, cv::NORM_INF) < 1e-9,
                     "idempotence residual exceeds 1e-9");

        DepthMap zb = gauss(-70.0, 14.0);
        GradientField ga = depth_to_gradients_spectral(z0, pitch);
        GradientField gb = depth_to_gradients_spectral(zb, pitch);
        GradientField gc;
        gc.p = 2.0 * ga.p - 0.5 * gb.p;
        gc.q = 2.0 * ga.q - 0.5 * gb.q;
        cv::Mat1d expect = 2.0 * integrate_frankot_chellappa(ga, pitch).z_um -
                           0.5 * integrate_frankot_chellappa(gb, pitch).z_um;
        expect -= cv::mean(expect)[0];
        DepthMap zc = integrate_frankot_chellappa(gc, pitch);
        crit.require(cv::norm(zc.z_um, expect, cv::NORM_INF) < 1e-9,
                     "linearity residual exceeds 1e-9");
    }

    {  // 200 um bump FWHM at 15 um pitch
        SyntheticScene scene;
        scene.width_px = 64;
        scene.height_px = 64;
        scene.pitch_um = 15.0;
        PlantedProtrusion p;
        p.id = 1;
        p.center_x_px = 32;
        p.center_y_px = 32;
        p.width_um = 200;
        p.height_um = 50;
        scene.protrusions.push_back(p);
        GradientField g;
        g.p = cv::Mat1d(64, 64);
        g.q = cv::Mat1d(64, 64);
        cv::Mat1d truth(64, 64);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                double z, gx, gy;
                scene.height_and_gradient(x * 15.0, y * 15.0, z, gx, gy);
                g.p(y, x) = gx;
                g.q(y, x) = gy;
                truth(y, x) = z;
            }
        DepthMap d = integrate_frankot_chellappa(g, 15.0);
        auto fwhm = [&](const cv::Mat1d& z) {
            double base = 0.5 * (z(32, 2) + z(32, 61));
            double half = base + 0.5 * (z(32, 32) - base);
            double left = 0, right = 0;
            for (int x = 2; x <= 32; ++x)
                if (z(32, x - 1) < half && z(32, x) >= half) {
                    left = (x - 1) +
                           (half - z(32, x - 1)) / (z(32, x) - z(32, x - 1));
                    break;
                }
            for (int x = 32; x < 62; ++x)
                if (z(32, x) >= half && z(32, x + 1) < half) {
                    right = x + (z(32, x) - half) / (z(32, x) - z(32, x + 1));
                    break;
                }
            return right - left;
        };
        double df = std::abs(fwhm(d.z_um) - fwhm(truth));
        crit.require(df <= 1.0, "FWHM deviation " + std::to_string(df) + " px");
    }
}

TEST_CASE("criterion 5 and 7: end-to-end detection and method comparison") {
    Criterion c5{"criterion 5 (>= 18/20 bumps, 0 false positives, widths within 1 bin)"};
    Criterion c7{"criterion 7 (rank correlation >= 0.9 across 4 regions)"};
    set_thread_count(8);
    cv::setNumThreads(1);

    auto data = fresh_dir("relief_acc5_data");
    auto out = fresh_dir("relief_acc5_out");
    nlohmann::json spec = detection_scene(true);
    nlohmann::json truth = write_synthetic_dataset(spec, data);

    RunConfig config;
    config.manifest = data / "manifest.json";
    config.region_mask = data / "regions.png";
    config.out_dir = out;
    run(config);

    ProtrusionSet found = load_protrusions_csv(out / "protrusions.csv");

    // match each planted bump to the nearest detection
    int matched = 0, width_ok = 0;
    std::vector<int> truth_counts(5, 0), found_counts(5, 0);
    for (const auto& pj : truth["protrusions"]) {
        double px = pj["x_px"].get<double>(), py = pj["y_px"].get<double>();
        double pw = pj["width_um"].get<double>();
        double r_px = 0.5 * pw / 15.0;
        const ProtrusionRecord* best = nullptr;
        double best_d = 1e300;
        for (const auto& rec : found.records) {
            double d = std::hypot(rec.centroid_x - px, rec.centroid_y - py);
            if (d < best_d) {
                best_d = d;
                best = &rec;
            }
        }
        int region = 1 + (py >= 256 ? 2 : 0) + (px >= 256 ? 1 : 0);
        ++truth_counts[region];
        if (best && best_d <= r_px + 3.0) {
            ++matched;
            int bin_t = static_cast<int>(pw / 100.0);
            int bin_f = static_cast<int>(best->equivalent_width_um / 100.0);
            if (std::abs(bin_t - bin_f) <= 1) ++width_ok;
        }
    }
    for (const auto& rec : found.records) ++found_counts[rec.region_label];

    c5.require(matched >= 18, "only " + std::to_string(matched) +
                                  "/20 planted bumps detected");
    c5.require(width_ok >= matched - 2,
               "width bins off by more than 1 for " +
                   std::to_string(matched - width_ok) + " matches");

    // bump-free control: zero false positives
    auto cdata = fresh_dir("relief_acc5_control");
    auto cout_dir = fresh_dir("relief_acc5_control_out");
    write_synthetic_dataset(detection_scene(false), cdata);
    RunConfig control = config;
    control.manifest = cdata / "manifest.json";
    control.region_mask = cdata / "regions.png";
    control.out_dir = cout_dir;
    run(control);
    ProtrusionSet fp = load_protrusions_csv(cout_dir / "protrusions.csv");
    c5.require(fp.records.empty(),
               std::to_string(fp.records.size()) +
                   " false positives on the bump-free control");

    // criterion 7: density ranking across the four regions
    std::vector<double> dt, df;
    for (int k = 1; k <= 4; ++k) {
        dt.push_back(truth_counts[k]);
        df.push_back(found_counts[k]);
    }
    double rho = relief::detail::spearman(dt, df);
    c7.require(rho >= 0.9,
               "rank correlation " + std::to_string(rho) + " below 0.9");
    c7.require(dt.size() >= 4, "fewer than 4 regions");
}

TEST_CASE("criterion 6: histogram mass conservation and density plausibility") {
    Criterion crit{"criterion 6 (exact mass conservation; 45 protrusions on 1 cm^2 -> 45/cm^2)"};

    RegionPartition part;
    part.labels = cv::Mat1i(100, 100, 1);  // 100x100 px at 100 um = 1 cm^2
    part.region_names = {"unit"};

    ProtrusionSet set;
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> wd(40.0, 560.0);
    for (int i = 0; i < 45; ++i) {
        ProtrusionRecord r;
        r.id = i + 1;
        r.equivalent_width_um = wd(rng);
        r.area_px = 10;
        r.region_label = 1;
        set.records.push_back(r);
    }
    auto stats = compute_stats(set, part, 100.0);
    bool ok_shape = stats.size() == 1;
    crit.require(ok_shape, "expected one region");
    if (ok_shape) {
        int mass = 0;
        for (int h : stats[0].histogram) mass += h;
        crit.require(mass == stats[0].count, "histogram mass != count");
        crit.require(stats[0].count == 45, "count != 45");
        crit.require(std::abs(stats[0].region_area_cm2 - 1.0) < 1e-12,
                     "region area != 1 cm^2");
        crit.require(std::abs(stats[0].count_per_cm2 - 45.0) < 1e-9,
                     "density != 45 per cm^2");
        crit.require(stats[0].count_per_cm2 >= 34.0 &&
                         stats[0].count_per_cm2 <= 57.0,
                     "density outside the 34..57 per cm^2 envelope");
    }
}

TEST_CASE("criterion 8: determinism across thread counts") {
    Criterion crit{"criterion 8 (byte-identical outputs at 1, 4, and 8 threads)"};

    auto data = fresh_dir("relief_acc8_data");
    nlohmann::json spec = {{"width_px", 128},
                           {"height_px", 128},
                           {"pitch_um", 15.0},
                           {"base_albedo", 0.6},
                           {"noise_sigma", 0.005},
                           {"seed", 9},
                           {"region_grid", {{"rows", 1}, {"cols", 2}}},
                           {"protrusions",
                            {{{"x_px", 36}, {"y_px", 44}, {"width_um", 300},
                              {"height_um", 50}, {"albedo_boost", 0.15}},
                             {{"x_px", 92}, {"y_px", 80}, {"width_um", 240},
                              {"height_um", 40}, {"albedo_boost", 0.15}}}}};
    write_synthetic_dataset(spec, data);

    std::vector<fs::path> outs;
    for (int threads : {1, 4, 8}) {
        auto out = fresh_dir("relief_acc8_out_" + std::to_string(threads));
        RunConfig config;
        config.manifest = data / "manifest.json";
        config.region_mask = data / "regions.png";
        config.out_dir = out;
        config.seed = 9;
        config.threads = threads;
        run(config);
        outs.push_back(out);
    }
    for (const char* name :
         {"protrusions.csv", "stats.json", "lights.json", "histogram.csv"}) {
        std::string ref = slurp(outs[0] / name);
        crit.require(!ref.empty(), std::string(name) + " missing or empty");
        for (size_t i = 1; i < outs.size(); ++i)
            crit.require(slurp(outs[i] / name) == ref,
                         std::string(name) + " differs between thread counts");
    }
}

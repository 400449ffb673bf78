// Command-line front end: micro-topography reconstruction of near-flat
// painted surfaces from multi-light image stacks, plus protrusion detection
// and per-region statistics.

#include <CLI11.hpp>

#include <opencv2/core.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "relief/export.hpp"
#include "relief/pipeline.hpp"
#include "relief/synth_dataset.hpp"

namespace fs = std::filesystem;
using namespace relief;

int main(int argc, char** argv) {
    CLI::App app{"relief: photometric-stereo surface micro-topography toolkit"};
    app.require_subcommand(1);

    int threads = 1;
    uint64_t seed = 0;
    std::string out_dir = ".";
    app.add_option("--threads", threads, "worker threads for tiled stages");
    app.add_option("--seed", seed, "seed for synthetic noise");
    app.add_option("--out", out_dir, "output directory");

    // synth
    auto* synth = app.add_subcommand("synth", "render a synthetic ground-truth stack");
    std::string scene_path;
    synth->add_option("--scene", scene_path, "scene spec JSON")->required();

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "estimate light directions and flat-field");
    std::string manifest;
    int degree = 2;
    double init_elev = 60.0;
    bool write_flatfield = false;
    cal->add_option("--manifest", manifest, "stack manifest JSON")->required();
    cal->add_option("--degree", degree, "polynomial degree (1-4)");
    cal->add_option("--init-elevation", init_elev, "starting elevation, degrees");
    cal->add_flag("--write-flatfield", write_flatfield, "write flat-fielded TIFFs");

    // solve
    auto* solve = app.add_subcommand("solve", "solve normals and albedo");
    std::string lights_path;
    solve->add_option("--manifest", manifest, "stack manifest JSON")->required();
    solve->add_option("--lights", lights_path, "lights.json from calibrate")->required();
    solve->add_option("--degree", degree, "flat-field polynomial degree");

    // integrate
    auto* integ = app.add_subcommand("integrate", "integrate normals to a depth map");
    std::string normals_path, validity_path;
    double pitch = 15.0;
    bool write_mesh = false;
    integ->add_option("--normals", normals_path, "normals.tif")->required();
    integ->add_option("--validity", validity_path, "validity.png")->required();
    integ->add_option("--pitch", pitch, "pixel pitch, micrometres")->required();
    integ->add_flag("--mesh", write_mesh, "also write mesh.ply");

    // detect
    auto* det = app.add_subcommand("detect", "detect and measure protrusions");
    std::string albedo_path, depth_path, regions_path, manual_path;
    DetectionParams params;
    det->add_option("--albedo", albedo_path, "albedo.tif")->required();
    det->add_option("--depth", depth_path, "depth.tif")->required();
    det->add_option("--regions", regions_path, "region mask PNG");
    det->add_option("--manual", manual_path, "manual protrusion mask PNG");
    det->add_option("--pitch", pitch, "pixel pitch, micrometres")->required();
    det->add_option("--threshold-sigmas", params.threshold_sigmas, "MAD multiplier");
    det->add_option("--threshold-window", params.threshold_window, "local window, px");
    det->add_option("--ncc-min", params.ncc_min, "min template correlation");
    det->add_option("--min-prominence", params.min_prominence_um, "blob height gate, um");
    det->add_option("--min-width", params.min_width_um, "smallest blob width, um");
    det->add_option("--max-width", params.max_width_um, "largest blob width, um");
    det->add_option("--min-area", params.min_area_px, "component area floor, px");

    // stats
    auto* st = app.add_subcommand("stats", "per-region counts and histograms");
    std::string protrusions_path, protrusions_b_path;
    double bin_width = 100.0;
    st->add_option("--protrusions", protrusions_path, "protrusions.csv")->required();
    st->add_option("--compare", protrusions_b_path,
                   "second protrusions.csv to compare against");
    st->add_option("--regions", regions_path, "region mask PNG")->required();
    st->add_option("--pitch", pitch, "pixel pitch, micrometres")->required();
    st->add_option("--bin-width", bin_width, "histogram bin width, um");

    // run
    auto* runc = app.add_subcommand("run", "full pipeline with run report");
    runc->add_option("--manifest", manifest, "stack manifest JSON")->required();
    runc->add_option("--regions", regions_path, "region mask PNG");
    runc->add_option("--manual", manual_path, "manual protrusion mask PNG");
    runc->add_option("--degree", degree, "flat-field polynomial degree");
    runc->add_option("--init-elevation", init_elev, "starting elevation, degrees");
    runc->add_option("--bin-width", bin_width, "histogram bin width, um");
    runc->add_option("--threshold-sigmas", params.threshold_sigmas, "MAD multiplier");
    runc->add_option("--min-prominence", params.min_prominence_um, "blob height gate, um");
    runc->add_flag("--mesh", write_mesh, "also write mesh.ply");
    runc->add_flag("--write-flatfield", write_flatfield, "write flat-fielded TIFFs");

    // global flags (--out, --threads, --seed) are accepted after the
    // subcommand name as well
    for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; }))
        sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    set_thread_count(threads);
    cv::setNumThreads(1);  // all parallelism goes through our fixed tiling

    try {
        fs::path out(out_dir);
        if (*synth) {
            std::ifstream in(scene_path);
            if (!in) throw input_error("cannot open scene spec: " + scene_path);
            nlohmann::json spec;
            in >> spec;
            if (!spec.contains("seed")) spec["seed"] = seed;
            write_synthetic_dataset(spec, out);
        } else if (*cal) {
            fs::create_directories(out);
            ImageStack stack = load_stack(manifest);
            RefineOptions opt;
            opt.init_elevation_deg = init_elev;
            auto [lights, flat] = calibrate(stack, degree, opt);
            save_lights_json(lights, out / "lights.json");
            if (write_flatfield)
                for (int i = 0; i < flat.count(); ++i)
                    save_gray16(flat.images[i],
                                out / ("flatfield_" + std::to_string(i) + ".tif"));
        } else if (*solve) {
            fs::create_directories(out);
            ImageStack stack = load_stack(manifest);
            LightSet lights = load_lights_json(lights_path);
            // reproduce the flat-fielding the calibration applied
            ImageStack flat;
            flat.pixel_pitch_um = stack.pixel_pitch_um;
            flat.color_reference = stack.color_reference;
            for (const auto& img : stack.images)
                flat.images.push_back(
                    flat_field(img, fit_polynomial_surface(img, degree)));
            auto [normals, albedo] = solve_ps(flat, lights);
            save_normals(normals, out / "normals.tif", out / "validity.png");
            save_gray16(albedo.k, out / "albedo.tif");
            if (!stack.color_reference.empty()) {
                cv::Mat3f colored = colorize_albedo(albedo, stack.color_reference);
                cv::Mat3w enc;
                colored.convertTo(enc, CV_16U, 65535.0);
                cv::imwrite((out / "albedo_color.tif").string(), enc);
            }
        } else if (*integ) {
            fs::create_directories(out);
            NormalMap normals = load_normals(normals_path, validity_path);
            GradientField grad = normals_to_gradients(normals);
            DepthMap depth = integrate_frankot_chellappa(grad, pitch);
            save_depth(depth, out / "depth.tif");
            if (write_mesh) export_mesh(depth, pitch, out / "mesh.ply");
        } else if (*det) {
            fs::create_directories(out);
            cv::Mat1f albedo = load_gray(albedo_path);
            DepthMap depth = load_depth(depth_path);
            RegionPartition partition;
            if (!regions_path.empty()) {
                partition = load_region_partition(regions_path, albedo.size());
            } else {
                partition.labels = cv::Mat1i(albedo.size(), 1);
                partition.region_names = {"full_frame"};
            }
            cv::Mat1b albedo_mask = albedo_candidates(albedo, params);
            cv::Mat1b depth_mask = depth_candidates(depth, pitch, params);
            ProtrusionSet set = fuse_and_label(albedo_mask, depth_mask,
                                               partition, pitch, &depth, params);
            save_protrusions_csv(set, out / "protrusions.csv");
            cv::Mat1b manual_bin, fused;
            cv::bitwise_or(albedo_mask, depth_mask, fused);
            if (!manual_path.empty()) {
                cv::Mat m = cv::imread(manual_path, cv::IMREAD_GRAYSCALE);
                if (m.empty())
                    throw input_error("cannot read manual mask: " + manual_path);
                manual_bin = m > 0;
                ProtrusionSet manual = ingest_manual(manual_bin, partition,
                                                     pitch, &depth, params);
                save_protrusions_csv(manual, out / "protrusions_manual.csv");
            }
            save_overlay(albedo, fused, manual_bin, out / "overlay.png");
        } else if (*st) {
            fs::create_directories(out);
            ProtrusionSet set = load_protrusions_csv(protrusions_path);
            cv::Mat probe = cv::imread(regions_path, cv::IMREAD_UNCHANGED);
            if (probe.empty())
                throw input_error("cannot read mask: " + regions_path);
            RegionPartition partition =
                load_region_partition(regions_path, probe.size());
            auto stats = compute_stats(set, partition, pitch, bin_width);
            save_stats_json(stats, out / "stats.json");
            save_histogram_csv(stats, out / "histogram.csv");
            save_histogram_svg(stats, out / "histogram.svg");
            if (!protrusions_b_path.empty()) {
                auto other = load_protrusions_csv(protrusions_b_path);
                auto stats_b = compute_stats(other, partition, pitch, bin_width);
                auto cmp = compare_methods(stats, stats_b);
                std::ofstream cmpout(out / "comparison.json");
                cmpout << comparison_to_json(cmp).dump(2) << "\n";
            }
        } else if (*runc) {
            RunConfig config;
            config.manifest = manifest;
            config.region_mask = regions_path;
            config.manual_mask = manual_path;
            config.out_dir = out;
            config.poly_degree = degree;
            config.refine.init_elevation_deg = init_elev;
            config.detection = params;
            config.bin_width_um = bin_width;
            config.write_mesh = write_mesh;
            config.write_flatfield = write_flatfield;
            config.seed = seed;
            config.threads = threads;
            run(config);
        }
    } catch (const input_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

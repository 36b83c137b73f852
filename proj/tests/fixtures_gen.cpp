// Regenerates the committed test fixtures:
//   fixtures/toy_head.gshp      - a small trained head for regression tests
//   fixtures/metric_report.json - frozen evaluate() output
// Run from the repository root after intentional numeric changes:
//   ./build/tests/fixtures_gen tests/fixtures

#include <cstdio>
#include <filesystem>
#include <string>

#include "gsr/io.hpp"
#include "gsr/metrics.hpp"
#include "gsr/refine.hpp"
#include "gsr/threading.hpp"
#include "gsr/train.hpp"

using namespace gsr;

namespace {

TrainConfig fixture_train_config() {
    TrainConfig cfg;
    cfg.dataset.min_gaussians = 160;
    cfg.dataset.max_gaussians = 240;
    cfg.dataset.camera_count = 5;
    cfg.dataset.image_width = 48;
    cfg.dataset.image_height = 48;
    cfg.num_scenes = 120;
    cfg.iterations = 600;
    cfg.batch = 4;
    cfg.lr = 1e-3;
    cfg.seed = 20240811;
    cfg.ref_view_stride = 2;
    cfg.unroll_steps = 4;
    cfg.cell_size = 4.0;
    cfg.perturb = {0.003, 0.05, 0.2, 0.8};
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: fixtures_gen <fixtures-dir>\n");
        return 1;
    }
    const std::string dir = argv[1];
    std::filesystem::create_directories(dir);
    set_max_threads(0);

    // Trained-head fixture.
    const TrainConfig cfg = fixture_train_config();
    auto [params, log] = train_head(cfg);
    save_head_params(dir + "/toy_head.gshp", params);
    std::printf("wrote %s/toy_head.gshp\n", dir.c_str());

    // Sanity: the shipped head must strictly improve reference PSNR per step
    // on the seeded validation scene used by the regression test.
    {
        const SyntheticScene scene = generate_scene(cfg.dataset, subseed(424242, 1));
        const TrainSample sample =
            make_train_sample(scene, cfg.perturb, subseed(424242, 2), cfg.ref_view_stride, {});
        RefineConfig rc;
        rc.steps = 3;
        rc.cell_size = cfg.cell_size;
        const auto [refined, trace] = refine(sample.init, sample.ref_views, params, rc);
        double prev = -1.0;
        for (const auto& step : trace.steps) {
            double mean = 0.0;
            for (double p : step.view_psnr) mean += p;
            mean /= step.view_psnr.size();
            std::printf("  fixture val PSNR %.4f\n", mean);
            if (mean <= prev) {
                std::fprintf(stderr, "fixture head does not strictly improve per step\n");
                return 1;
            }
            prev = mean;
        }
    }

    // Metric report fixture: a seeded perturbed scene evaluated against the
    // ground-truth renders.
    {
        SyntheticSceneSpec spec;
        spec.min_gaussians = 80;
        spec.max_gaussians = 100;
        spec.camera_count = 3;
        spec.image_width = 32;
        spec.image_height = 32;
        const SyntheticScene scene = generate_scene(spec, 515151);
        const GaussianScene noisy =
            perturb_scene(scene.ground_truth, {0.005, 0.1, 0.08, 0.4}, 515152);
        std::vector<std::pair<Image, Camera>> views;
        for (std::size_t m = 0; m < scene.cameras.size(); ++m) {
            views.emplace_back(scene.images[m], scene.cameras[m]);
        }
        const MetricReport report = evaluate(noisy, views);
        const std::string json = report.to_json();
        write_file_atomic(dir + "/metric_report.json", json.data(), json.size());
        std::printf("wrote %s/metric_report.json\n", dir.c_str());
    }
    return 0;
}

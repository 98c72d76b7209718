#include "cgdl/ablation.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "cgdl/errors.hpp"
#include "cgdl/metrics.hpp"

namespace cgdl {

namespace {

std::uint64_t mix2(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

const std::vector<std::string>& ablation_variant_names() {
    static const std::vector<std::string> names = {"I", "II", "III", "IV", "V", "VI", "VII"};
    return names;
}

AblationVariant ablation_variant(const std::string& name) {
    if (name == "I") return {"I", false, true, DetectorKind::softmax_threshold};
    if (name == "II") return {"II", false, false, DetectorKind::softmax_threshold};
    if (name == "III") return {"III", true, false, DetectorKind::softmax_threshold};
    if (name == "IV") return {"IV", false, false, DetectorKind::cgd};
    if (name == "V") return {"V", true, false, DetectorKind::cgd};
    if (name == "VI") return {"VI", true, false, DetectorKind::re};
    if (name == "VII") return {"VII", true, false, DetectorKind::cgd_and_re};
    std::string valid;
    for (const std::string& n : ablation_variant_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw config_error("unknown ablation variant '" + name + "' (valid: " + valid + ")");
}

std::size_t unseen_classes_for_openness(double level, std::size_t known_classes) {
    if (!(level >= 0.0 && level < 1.0))
        throw config_error("openness level " + std::to_string(level) + " must lie in [0,1)");
    if (known_classes == 0) throw config_error("openness mapping needs at least one known class");
    const double ratio = 1.0 / ((1.0 - level) * (1.0 - level));
    return static_cast<std::size_t>(
        std::llround(2.0 * static_cast<double>(known_classes) * (ratio - 1.0)));
}

namespace {

AblationCell run_cell(const AblationSpec& spec, const std::string& variant_name,
                      std::size_t level_idx, std::uint64_t seed) {
    AblationCell cell;
    cell.variant = variant_name;
    cell.openness_level = spec.openness_levels[level_idx];
    cell.seed = seed;
    try {
        const AblationVariant variant = ablation_variant(variant_name);
        const std::size_t K = spec.known_classes;
        const std::size_t U = unseen_classes_for_openness(cell.openness_level, K);
        if (K + U > max_templates())
            throw config_error("openness level needs " + std::to_string(U) +
                               " unseen classes; only " + std::to_string(max_templates() - K) +
                               " template slots remain");
        cell.unknown_classes = U;
        cell.openness_actual = U > 0 ? openness(K, K + U, K) : 0.0;

        // Everything below depends only on (seed, openness), never on the
        // variant, so all variants compare on identical data and init.
        const std::uint64_t cell_seed = mix2(seed, level_idx);

        SyntheticSpec train_spec{K, spec.train_per_class, spec.image_side, spec.noise_sigma,
                                 mix2(cell_seed, 1), 0};
        const LabeledImageSet train_set = generate_synthetic(train_spec);
        SyntheticSpec test_spec{K, spec.test_per_class, spec.image_side, spec.noise_sigma,
                                mix2(cell_seed, 2), 0};
        const LabeledImageSet test_known = generate_synthetic(test_spec);

        LabeledImageSet test_all = test_known;
        std::vector<int> truth(test_known.labels);
        if (U > 0) {
            OutlierSpec ospec;
            ospec.kind = OutlierKind::unseen_templates;
            ospec.count = U * spec.test_per_class;
            ospec.seed = mix2(cell_seed, 3);
            ospec.known_classes = K;
            ospec.unseen_classes = U;
            ospec.noise_sigma = spec.noise_sigma;
            const LabeledImageSet unknown = make_outliers(ospec, &train_set);
            test_all.append(unknown);
            truth.insert(truth.end(), unknown.size(), static_cast<int>(K));
        }

        LadderConfig mc;
        mc.input_dim = spec.image_side * spec.image_side;
        mc.layer_dims = spec.layer_dims;
        mc.latent_dim = spec.latent_dim;
        mc.num_classes = K;
        mc.prelu_init = spec.prelu_init;
        mc.ladder_enabled = variant.ladder;
        LadderModel model(mc, cell_seed);

        TrainConfig tc = spec.train;
        tc.seed = cell_seed;
        tc.plain_classifier = variant.plain_classifier;
        train(model, train_set, tc);

        const bool needs_gaussians =
            variant.detector == DetectorKind::cgd || variant.detector == DetectorKind::cgd_and_re;
        const bool needs_tau_r =
            variant.detector == DetectorKind::re || variant.detector == DetectorKind::cgd_and_re;
        std::vector<ClassGaussian> gaussians;
        if (needs_gaussians) gaussians = fit_class_gaussians(model, train_set);
        DetectorThresholds thresholds;
        if (needs_tau_r) thresholds.tau_r = calibrate_tau_r(model, train_set);

        const std::vector<Decision> decisions =
            decide_batch(model, test_all, gaussians, thresholds, variant.detector);
        cell.macro_f1 = macro_f1(confusion_from_decisions(truth, decisions, K));
        cell.closed_set_accuracy = closed_set_accuracy(model, test_known);
    } catch (const std::exception& e) {
        cell.failed = true;
        cell.diagnostic = e.what();
    }
    return cell;
}

}  // namespace

std::vector<AblationCell> run_ablation(const AblationSpec& spec) {
    if (spec.variants.empty()) throw config_error("run_ablation: no variants given");
    if (spec.openness_levels.empty()) throw config_error("run_ablation: no openness levels given");
    if (spec.seeds.empty()) throw config_error("run_ablation: no seeds given");
    for (const std::string& v : spec.variants) ablation_variant(v);  // fail fast on bad names

    struct Job {
        std::size_t variant_idx, level_idx, seed_idx;
    };
    std::vector<Job> jobs;
    for (std::size_t v = 0; v < spec.variants.size(); ++v)
        for (std::size_t l = 0; l < spec.openness_levels.size(); ++l)
            for (std::size_t s = 0; s < spec.seeds.size(); ++s) jobs.push_back({v, l, s});

    std::vector<AblationCell> cells(jobs.size());
    auto run_job = [&](std::size_t j) {
        cells[j] = run_cell(spec, spec.variants[jobs[j].variant_idx], jobs[j].level_idx,
                            spec.seeds[jobs[j].seed_idx]);
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(spec.threads, jobs.size()));
    if (threads == 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1))
                    run_job(j);
            });
        for (std::thread& t : pool) t.join();
    }
    return cells;
}

std::vector<AblationSummaryRow> summarize_ablation(const AblationSpec& spec,
                                                   const std::vector<AblationCell>& cells) {
    std::vector<AblationSummaryRow> rows;
    for (const std::string& v : spec.variants) {
        for (double level : spec.openness_levels) {
            AblationSummaryRow row;
            row.variant = v;
            row.openness_level = level;
            double sum = 0.0, sum2 = 0.0;
            for (const AblationCell& c : cells) {
                if (c.failed || c.variant != v || c.openness_level != level) continue;
                sum += c.macro_f1;
                sum2 += c.macro_f1 * c.macro_f1;
                ++row.cells;
            }
            if (row.cells > 0) {
                const double n = static_cast<double>(row.cells);
                row.mean_macro_f1 = sum / n;
                const double var = std::max(0.0, sum2 / n - row.mean_macro_f1 * row.mean_macro_f1);
                row.std_macro_f1 = std::sqrt(var);
            }
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace cgdl

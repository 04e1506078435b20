#include "semloc/evaluation.h"
#include "semloc/io.h"
#include "semloc/localizer.h"
#include "semloc/semantic_map.h"
#include "semloc/synth.h"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

using namespace semloc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

// Thrown for bad flags or config contents; maps to the usage exit code.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

bool g_verbose = false;

void log(const std::string &msg) { std::cerr << "semloc: " << msg << "\n"; }
void vlog(const std::string &msg) {
    if (g_verbose) log(msg);
}

struct Common {
    std::optional<std::uint64_t> seed;
    int threads = 0;
};

io::PipelineConfig load_pipeline_config(const std::string &path) {
    if (path.empty()) return {};
    try {
        return io::load_config(path);
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char *f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

int cmd_synth(const std::string &spec_path, const std::string &out, const Common &common) {
    synth::SceneSpec spec = synth::paper_like_spec();
    if (!spec_path.empty()) {
        const io::Bytes b = io::read_file(spec_path);
        try {
            spec = io::parse_scene_spec(std::string(b.begin(), b.end()), spec_path);
        } catch (const std::invalid_argument &e) {
            throw UsageError(e.what());
        }
    }
    if (common.seed) spec.seed = *common.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const synth::Scene scene = synth::generate_scene(spec);
    io::write_dataset(out, scene.dataset, &scene.query_poses);
    io::write_text(fs::path(out) / "scene_spec.json", io::render_scene_spec(spec));
    log("wrote " + std::to_string(scene.dataset.database.size()) + " database images and " +
        std::to_string(scene.dataset.queries.size()) + " queries to " + out + " in " +
        fmt("%.2f", seconds_since(t0)) + " s");
    return 0;
}

int cmd_build_map(const std::string &dataset, const std::string &config, const std::string &out) {
    const io::PipelineConfig cfg = load_pipeline_config(config);
    const io::LoadedDataset ld = io::load_dataset(dataset);
    const auto t0 = std::chrono::steady_clock::now();
    MapBuildLog mlog;
    const DenseMap map = build_map(ld.dataset.database, cfg.map, &mlog);
    io::write_file(out, io::encode_map(map));

    std::string text;
    text += "database_images " + std::to_string(ld.dataset.database.size()) + "\n";
    text += "input_depth_pixels " + std::to_string(mlog.input_depth_pixels) + "\n";
    text += "filtered_depth_pixels " + std::to_string(mlog.filtered_depth_pixels) + "\n";
    text += "fused_points " + std::to_string(mlog.fused_points) + "\n";
    text += "labeled_points " + std::to_string(mlog.labeled_points) + "\n";
    text += "stable_points " + std::to_string(mlog.stable_points) + "\n";
    for (const auto &w : mlog.warnings) {
        text += "warning " + w + "\n";
        log("warning: " + w);
    }
    io::write_text(out + ".log", text);
    log("map with " + std::to_string(map.size()) + " points written to " + out + " in " +
        fmt("%.2f", seconds_since(t0)) + " s");
    vlog("pixels " + std::to_string(mlog.input_depth_pixels) + " -> " + std::to_string(mlog.filtered_depth_pixels) +
         ", fused " + std::to_string(mlog.fused_points) + ", labeled " + std::to_string(mlog.labeled_points));
    return 0;
}

json diagnostics_json(const LocalizationResult &r) {
    json j{{"query", r.query},
           {"success", r.pose.has_value()},
           {"failure", r.failure},
           {"correspondences", r.correspondences},
           {"inliers", r.inliers},
           {"iterations", r.iterations},
           {"mean_error_px", r.mean_error_px}};
    json imgs = json::array();
    for (const auto &d : r.retrieved)
        imgs.push_back({{"image", d.image},
                        {"retrieval_distance", d.retrieval_distance},
                        {"matches", d.matches},
                        {"correspondences", d.correspondences},
                        {"outside_image", d.outside_image},
                        {"invalid_depth", d.invalid_depth},
                        {"temporary_inliers", d.temporary_inliers},
                        {"consistent", d.score.consistent},
                        {"projected", d.score.projected}});
    j["retrieved"] = imgs;
    return j;
}

int cmd_localize(const std::string &dataset, const std::string &map_path, const std::string &config,
                 const std::string &out, const Common &common, std::optional<int> top_k_day,
                 std::optional<int> top_k_night) {
    io::PipelineConfig cfg = load_pipeline_config(config);
    if (common.seed) cfg.localizer.seed = *common.seed;
    if (top_k_day) cfg.localizer.retrieval.top_k_day = *top_k_day;
    if (top_k_night) cfg.localizer.retrieval.top_k_night = *top_k_night;

    io::LoadedDataset ld = io::load_dataset(dataset);
    try {
        cfg.apply_family_overrides(ld.dataset.families);
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    const DenseMap map = io::decode_map(io::read_file(map_path), map_path);
    for (const auto &p : map)
        if (p.label == kUnlabeled) throw io::DataError(map_path + ": map point without a semantic label");

    const auto t0 = std::chrono::steady_clock::now();
    const Localizer localizer(ld.dataset, map, cfg.localizer);
    const auto results = localizer.localize_all(ld.dataset.queries);

    std::vector<io::CameraLine> estimates;
    json diag = json::array();
    size_t ok = 0;
    for (size_t i = 0; i < results.size(); ++i) {
        const auto &r = results[i];
        if (r.pose) {
            estimates.push_back({r.query, ld.dataset.queries[i].intrinsics, *r.pose});
            ++ok;
        } else {
            vlog("query " + std::to_string(r.query) + ": " + r.failure);
        }
        diag.push_back(diagnostics_json(r));
    }
    fs::create_directories(out);
    io::write_cameras(fs::path(out) / "estimates.txt", estimates);
    json doc{{"seed", cfg.localizer.seed}, {"config", io::render_config(cfg)}, {"queries", diag}};
    io::write_text(fs::path(out) / "diagnostics.json", doc.dump(2) + "\n");
    log("localized " + std::to_string(ok) + " of " + std::to_string(results.size()) + " queries in " +
        fmt("%.2f", seconds_since(t0)) + " s");
    return 0;
}

json report_json(const RecallReport &r) {
    json buckets = json::array();
    for (size_t i = 0; i < r.buckets.size(); ++i)
        buckets.push_back({{"max_position_m", r.buckets[i].max_position},
                           {"max_orientation_deg", r.buckets[i].max_orientation},
                           {"recall_percent", r.percentages[i]}});
    json outcomes = json::array();
    for (const auto &o : r.outcomes) {
        json jo{{"query", o.query}};
        if (o.error) {
            jo["position_error_m"] = o.error->position_error;
            jo["orientation_error_deg"] = o.error->orientation_error;
        } else {
            jo["position_error_m"] = nullptr;
            jo["orientation_error_deg"] = nullptr;
        }
        outcomes.push_back(jo);
    }
    return {{"condition", r.condition}, {"total", r.total},       {"failures", r.failures},
            {"buckets", buckets},       {"summary", format_percentages(r)}, {"outcomes", outcomes}};
}

int cmd_evaluate(const std::string &estimates_path, const std::string &gt_path, const std::string &dataset,
                 const std::string &config, const std::string &buckets_override, const std::string &out) {
    io::PipelineConfig cfg = load_pipeline_config(config);
    if (!buckets_override.empty()) {
        try {
            const auto parsed = io::parse_config("evaluate.day_buckets = " + buckets_override + "\n" +
                                                     "evaluate.night_buckets = " + buckets_override + "\n",
                                                 "--buckets");
            cfg.day_buckets = parsed.day_buckets;
            cfg.night_buckets = parsed.night_buckets;
        } catch (const std::invalid_argument &e) {
            throw UsageError(e.what());
        }
    }

    std::map<ImageId, RigidPose> gt;
    for (const auto &c : io::read_cameras(gt_path))
        if (!gt.emplace(c.id, c.pose).second)
            throw io::DataError(gt_path + ": duplicate query id " + std::to_string(c.id));
    std::map<ImageId, std::optional<RigidPose>> est;
    for (const auto &c : io::read_cameras(estimates_path)) {
        if (!gt.contains(c.id))
            throw io::DataError(estimates_path + ": query " + std::to_string(c.id) + " has no ground truth");
        if (!est.emplace(c.id, c.pose).second)
            throw io::DataError(estimates_path + ": duplicate query id " + std::to_string(c.id));
    }
    if (gt.empty()) throw io::DataError(gt_path + ": no ground-truth poses");

    std::vector<RecallReport> reports;
    if (!dataset.empty()) {
        const io::LoadedDataset ld = io::load_dataset(dataset);
        std::map<Condition, std::map<ImageId, RigidPose>> split;
        for (const auto &q : ld.dataset.queries) {
            auto it = gt.find(q.id);
            if (it != gt.end()) split[q.condition].emplace(q.id, it->second);
        }
        for (const auto &[id, pose] : gt) {
            (void)pose;
            const bool known = std::any_of(ld.dataset.queries.begin(), ld.dataset.queries.end(),
                                           [&](const QueryRecord &q) { return q.id == id; });
            if (!known) throw io::DataError(gt_path + ": query " + std::to_string(id) + " is not in the dataset");
        }
        for (const auto &[cond, g] : split) {
            std::map<ImageId, std::optional<RigidPose>> e;
            for (const auto &[id, pose] : g) {
                (void)pose;
                auto it = est.find(id);
                if (it != est.end()) e.emplace(id, it->second);
            }
            reports.push_back(evaluate(e, g, cond == Condition::Day ? cfg.day_buckets : cfg.night_buckets,
                                       condition_name(cond)));
        }
    } else {
        reports.push_back(evaluate(est, gt, cfg.day_buckets, "all"));
    }

    const std::string text = render_report(reports);
    fs::create_directories(out);
    io::write_text(fs::path(out) / "report.txt", text);
    json doc = json::array();
    for (const auto &r : reports) doc.push_back(report_json(r));
    io::write_text(fs::path(out) / "report.json", doc.dump(2) + "\n");
    std::cerr << text;
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Semantic structure-based visual localization"};
    app.require_subcommand(1);
    Common common;
    bool verbose = false;
    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--seed", common.seed, "Random seed");
        sub->add_option("--threads", common.threads, "Worker threads (0: OpenMP default)")->check(CLI::NonNegativeNumber);
        sub->add_flag("--verbose,-v", verbose, "Verbose logging");
    };

    std::string spec_path, out, dataset, config, map_path, estimates, gt, buckets;
    std::optional<int> top_k_day, top_k_night;

    auto *synth_cmd = app.add_subcommand("synth", "Generate a synthetic street-canyon dataset");
    synth_cmd->add_option("--spec", spec_path, "Scene spec JSON")->check(CLI::ExistingFile);
    synth_cmd->add_option("--out", out, "Output dataset directory")->required();
    add_common(synth_cmd);

    auto *map_cmd = app.add_subcommand("build-map", "Build the dense semantic map");
    map_cmd->add_option("--dataset", dataset, "Dataset directory")->required();
    map_cmd->add_option("--config", config, "Pipeline config")->check(CLI::ExistingFile);
    map_cmd->add_option("--out", out, "Output map file")->required();
    add_common(map_cmd);

    auto *loc_cmd = app.add_subcommand("localize", "Estimate query poses");
    loc_cmd->add_option("--dataset", dataset, "Dataset directory")->required();
    loc_cmd->add_option("--map", map_path, "Dense map file")->required();
    loc_cmd->add_option("--config", config, "Pipeline config")->check(CLI::ExistingFile);
    loc_cmd->add_option("--out", out, "Output directory")->required();
    loc_cmd->add_option("--top-k-day", top_k_day, "Retrieved images for day queries")->check(CLI::PositiveNumber);
    loc_cmd->add_option("--top-k-night", top_k_night, "Retrieved images for night queries")->check(CLI::PositiveNumber);
    add_common(loc_cmd);

    auto *eval_cmd = app.add_subcommand("evaluate", "Compute pose recall");
    eval_cmd->add_option("--estimates", estimates, "Estimated poses")->required();
    eval_cmd->add_option("--ground-truth", gt, "Ground-truth poses")->required();
    eval_cmd->add_option("--dataset", dataset, "Dataset directory, for per-condition reports");
    eval_cmd->add_option("--config", config, "Pipeline config")->check(CLI::ExistingFile);
    eval_cmd->add_option("--buckets", buckets, "Thresholds as meters:degrees pairs, e.g. 0.25:2,0.5:5,5:10");
    eval_cmd->add_option("--out", out, "Output directory")->required();
    add_common(eval_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kUsageError;
    }
    g_verbose = verbose;
    if (common.threads > 0) omp_set_num_threads(common.threads);

    try {
        if (*synth_cmd) return cmd_synth(spec_path, out, common);
        if (*map_cmd) return cmd_build_map(dataset, config, out);
        if (*loc_cmd) return cmd_localize(dataset, map_path, config, out, common, top_k_day, top_k_night);
        if (*eval_cmd) return cmd_evaluate(estimates, gt, dataset, config, buckets, out);
    } catch (const UsageError &e) {
        log(std::string("error: ") + e.what());
        return kUsageError;
    } catch (const std::exception &e) {
        log(std::string("error: ") + e.what());
        return kDataError;
    }
    return kUsageError;
}

// Serial reference vs OpenMP kernels on a synthetic scene. Prints one line per kernel.
#include "semloc/matching.h"
#include "semloc/scoring.h"
#include "semloc/semantic_map.h"
#include "semloc/synth.h"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>

using namespace semloc;

namespace {

double time_best(int reps, const std::function<void()> &f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

void row(const char *name, double serial, double parallel, bool same) {
    std::printf("%-14s serial %9.4f s  parallel %9.4f s  speedup %5.2fx  %s\n", name, serial, parallel,
                serial / parallel, same ? "identical" : "MISMATCH");
}

} // namespace

int main(int argc, char **argv) {
    const int reps = argc > 1 ? std::atoi(argv[1]) : 3;
    synth::SceneSpec spec = synth::paper_like_spec();
    spec.queries = 4;
    const synth::Scene scene = synth::generate_scene(spec);
    const auto &db = scene.dataset.database;
    std::printf("threads %d, %zu database images %dx%d\n", omp_get_max_threads(), db.size(), spec.image_width,
                spec.image_height);

    const auto neighbors = select_neighbors(db, 4);
    std::vector<const DatabaseImageRecord *> nb;
    for (size_t j : neighbors[0]) nb.push_back(&db[j]);
    DepthMap fs, fp;
    const double t_fs = time_best(reps, [&] { fs = serial::filter_depth_map(db[0], nb, {}); });
    const double t_fp = time_best(reps, [&] { fp = filter_depth_map(db[0], nb, {}); });
    row("filter_depth", t_fs, t_fp, fs == fp);

    const auto fused = fuse_depth_maps(db, 0.05);
    DenseMap ls, lp;
    const double t_ls = time_best(reps, [&] { ls = serial::label_and_cone(fused, db); });
    const double t_lp = time_best(reps, [&] { lp = label_and_cone(fused, db); });
    bool same = ls.size() == lp.size();
    for (size_t i = 0; same && i < ls.size(); ++i)
        same = ls[i].label == lp[i].label && ls[i].cone.theta == lp[i].cone.theta && ls[i].support == lp[i].support;
    row("label_cone", t_ls, t_lp, same);

    const auto &q = scene.dataset.queries[0];
    const auto &fam = scene.dataset.families[0];
    std::vector<Match2D2D> ms, mp;
    const double t_ms = time_best(reps, [&] {
        for (const auto &d : db) ms = serial::match_family(q.features.at(fam.name), d.features.at(fam.name), fam);
    });
    const double t_mp = time_best(reps, [&] {
        for (const auto &d : db) mp = match_family(q.features.at(fam.name), d.features.at(fam.name), fam);
    });
    same = ms.size() == mp.size();
    for (size_t i = 0; same && i < ms.size(); ++i) same = ms[i].query_index == mp[i].query_index && ms[i].db_index == mp[i].db_index;
    row("match_family", t_ms, t_mp, same);

    const DenseMap map = remove_unstable_classes(lp, default_unstable_classes());
    const RigidPose &pose = scene.query_poses.at(q.id);
    SemanticScore ss, sp;
    const double t_ss = time_best(reps, [&] { ss = serial::score_pose(map, pose, q.intrinsics, q.labels, {}); });
    const double t_sp = time_best(reps, [&] { sp = score_pose(map, pose, q.intrinsics, q.labels, {}); });
    row("score_pose", t_ss, t_sp, ss.consistent == sp.consistent && ss.projected == sp.projected);
    return 0;
}

#include "semloc/localizer.h"

#include "parallel.h"

#include <stdexcept>

namespace semloc {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    auto mix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return mix(mix(mix(seed) ^ a) ^ b);
}

namespace {
RetrievalIndex build_index(const Dataset &ds) {
    std::vector<GlobalDescriptor> g;
    for (const auto &r : ds.database) g.push_back(r.global);
    return RetrievalIndex::build(g);
}
} // namespace

Localizer::Localizer(const Dataset &dataset, const DenseMap &map, LocalizerConfig cfg)
    : dataset_(dataset), map_(map), cfg_(std::move(cfg)), index_(build_index(dataset)) {
    cfg_.gate.validate();
    cfg_.temporary.validate();
    cfg_.final_ransac.validate();
    if (cfg_.retrieval.top_k_day < 1 || cfg_.retrieval.top_k_night < 1)
        throw std::invalid_argument("localizer: top-k must be >= 1");
    for (const auto &f : dataset_.families)
        if (cfg_.families.empty() || cfg_.families.contains(f.name)) families_.push_back(f);
    for (const auto &name : cfg_.families) {
        bool found = false;
        for (const auto &f : dataset_.families) found = found || f.name == name;
        if (!found) throw std::invalid_argument("localizer: unknown feature family '" + name + "'");
    }
    if (families_.empty()) throw std::invalid_argument("localizer: no feature families");
}

LocalizationResult Localizer::localize(const QueryRecord &query) const {
    LocalizationResult res;
    res.query = query.id;
    const std::uint64_t qseed = derive_seed(cfg_.seed, static_cast<std::uint64_t>(query.id));

    const auto hits = index_.query_top_k(query.global, cfg_.retrieval.top_k(query.condition));
    std::vector<Correspondence2D3D> pooled;
    std::vector<SemanticScore> scores;
    for (const auto &hit : hits) {
        const DatabaseImageRecord &db = dataset_.database_image(hit.id);
        RetrievedImageDiagnostics diag;
        diag.image = hit.id;
        diag.retrieval_distance = hit.distance;
        diag.score.image = hit.id;

        std::vector<std::vector<Correspondence2D3D>> per_family;
        for (const auto &fam : families_) {
            const auto qit = query.features.find(fam.name);
            const auto dit = db.features.find(fam.name);
            if (qit == query.features.end() || dit == db.features.end()) continue;
            const auto matches = match_family(qit->second, dit->second, fam);
            diag.matches += matches.size();
            LiftResult lifted = lift_to_3d(matches, qit->second, dit->second, db);
            diag.outside_image += lifted.outside_image;
            diag.invalid_depth += lifted.invalid_depth;
            per_family.push_back(std::move(lifted.correspondences));
        }
        auto corrs = merge_hybrid(per_family);
        diag.correspondences = corrs.size();

        RansacConfig tcfg = cfg_.temporary;
        tcfg.seed = derive_seed(qseed, static_cast<std::uint64_t>(hit.id), 1);
        if (const auto temp = estimate_temporary_pose(corrs, query.intrinsics, tcfg)) {
            diag.temporary_inliers = static_cast<int>(temp->inliers.size());
            diag.score = score_pose(map_, temp->pose, query.intrinsics, query.labels, cfg_.gate);
            diag.score.image = hit.id;
        }
        if (cfg_.score_floor <= 0 || static_cast<double>(diag.score.consistent) >= cfg_.score_floor) {
            pooled.insert(pooled.end(), corrs.begin(), corrs.end());
            scores.push_back(diag.score);
        }
        res.retrieved.push_back(diag);
    }

    res.correspondences = pooled.size();
    if (pooled.empty()) {
        res.failure = "no correspondences";
        return res;
    }
    if (pooled.size() < 4) {
        res.failure = "too few correspondences";
        return res;
    }
    if (cfg_.semantic_weighting) {
        pooled = normalize_weights(scores, pooled);
    } else {
        for (auto &c : pooled) c.weight = 1.0 / static_cast<double>(pooled.size());
    }

    RansacConfig fcfg = cfg_.final_ransac;
    fcfg.seed = derive_seed(qseed, 0, 2);
    const auto sol = weighted_ransac_pnp(pooled, query.intrinsics, fcfg);
    if (!sol) {
        res.failure = "no pose with enough inliers";
        return res;
    }
    res.inliers = static_cast<int>(sol->inliers.size());
    res.iterations = sol->iterations;
    res.mean_error_px = sol->mean_error_px;
    res.pose = refine_pose(*sol, pooled, query.intrinsics, cfg_.refine);
    return res;
}

std::vector<LocalizationResult> Localizer::localize_all(std::span<const QueryRecord> queries) const {
    std::vector<LocalizationResult> out(queries.size());
    const long n = static_cast<long>(queries.size());
    ExceptionCollector errors;
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n; ++i) errors.run([&] { out[i] = localize(queries[i]); });
    errors.rethrow();
    return out;
}

} // namespace semloc

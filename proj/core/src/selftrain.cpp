#include "celladapt/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>
#include <omp.h>

#include "celladapt/errors.hpp"
#include "celladapt/rng.hpp"

namespace fs = std::filesystem;

namespace celladapt {

void validate(const AdaptationConfig& cfg) {
    if (cfg.th_d < 0.0f || cfg.th_d > 255.0f)
        throw ConfigError("th_d must be in [0, 255]");
    if (cfg.th_u < 0)
        throw ConfigError("th_u must be >= 0");
    if (cfg.th_u_fraction < 0.0 || cfg.th_u_fraction > 1.0)
        throw ConfigError("th_u_fraction must be in [0, 1]");
    if (cfg.T < 1)
        throw ConfigError("T must be >= 1");
    if (cfg.max_iterations < 1)
        throw ConfigError("max_iterations must be >= 1");
    if (!(cfg.sigma > 0.0f))
        throw ConfigError("sigma must be positive");
    if (!(cfg.amplitude > 0.0f) || cfg.amplitude > 255.0f)
        throw ConfigError("amplitude must be in (0, 255]");
    if (cfg.nms_radius < 1)
        throw ConfigError("nms_radius must be >= 1");
    if (!(cfg.d_match > 0.0f))
        throw ConfigError("d_match must be positive");
    if (cfg.patch_size < 16 || cfg.patch_size % 16 != 0)
        throw ConfigError("patch_size must be a positive multiple of 16");
    if (cfg.detector_train.epochs < 1 || cfg.discriminator_train.epochs < 1 ||
        cfg.detector_finetune_epochs < 1 || cfg.discriminator_finetune_epochs < 1)
        throw ConfigError("epoch counts must be >= 1");
    if (cfg.neg_per_pos < 1)
        throw ConfigError("neg_per_pos must be >= 1");
    if (cfg.candidate_subset < 0)
        throw ConfigError("candidate_subset must be >= 0");
    uncertainty_metric_from_string(cfg.uncertainty_metric);
}

std::vector<PatchSample> select_pseudo(std::span<const PseudoCandidate> scored_sorted,
                                       int th_u) {
    std::vector<PatchSample> out;
    const int take = std::min<int>(std::max(th_u, 0), static_cast<int>(scored_sorted.size()));
    for (int i = 0; i < take; ++i) {
        const PseudoCandidate& c = scored_sorted[static_cast<std::size_t>(i)];
        PatchSample s = *c.sample;
        s.points = c.points;
        s.provenance = Provenance::Pseudo;
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

std::uint64_t iter_seed(std::uint64_t seed, int k, const char* name) {
    return sub_seed(sub_seed(seed, "iter" + std::to_string(k)), name);
}

int selection_count(const AdaptationConfig& cfg, std::size_t remaining) {
    if (remaining == 0) return 0;
    if (cfg.th_u_fraction > 0.0)
        return std::max<int>(
            1, static_cast<int>(std::llround(cfg.th_u_fraction * static_cast<double>(remaining))));
    return cfg.th_u;
}

std::map<std::string, const PatchSample*> index_samples(const DataSet& ds) {
    std::map<std::string, const PatchSample*> by_id;
    for (const PatchSample& s : ds.samples) by_id[s.id] = &s;
    return by_id;
}

std::vector<PatchSample> split_samples(const DataSet& ds,
                                       const std::map<std::string, const PatchSample*>& by_id,
                                       const std::vector<std::string>& ids) {
    std::vector<PatchSample> v;
    v.reserve(ids.size());
    for (const std::string& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw DataError("manifest id '" + id + "' has no sample");
        v.push_back(*it->second);
    }
    return v;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_metrics_csv(const std::string& path, const SplitEvaluation& src,
                       const SplitEvaluation& tgt) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "split,images,tp,fp,fn,precision,recall,f_score\n";
    auto row = [&](const char* name, const SplitEvaluation& e) {
        out << name << ',' << e.images << ',' << e.aggregate.tp << ',' << e.aggregate.fp << ','
            << e.aggregate.fn << ',' << fmt(e.aggregate.precision) << ','
            << fmt(e.aggregate.recall) << ',' << fmt(e.aggregate.f_score) << '\n';
    };
    row("source", src);
    row("target", tgt);
}

void write_scores_csv(const std::string& path, std::span<const ScoredCandidate> scored) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "candidate_id,score,variance\n";
    for (const ScoredCandidate& sc : scored)
        out << sc.id << ',' << fmt(sc.uncertainty.score) << ',' << fmt(sc.uncertainty.variance)
            << '\n';
}

void write_selected_csv(const std::string& path, std::span<const SelectedRecord> selected) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "candidate_id,score\n";
    for (const SelectedRecord& r : selected) out << r.id << ',' << fmt(r.score) << '\n';
}

void write_state_json(const std::string& path, const AdaptationState& state,
                      const AdaptationConfig& cfg) {
    nlohmann::json j;
    j["complete"] = true;
    j["iteration"] = state.iteration; // iterations finished so far
    j["config_hash"] = cfg.config_hash;
    nlohmann::json pseudo = nlohmann::json::array();
    for (const PseudoLabel& p : state.pseudo) {
        nlohmann::json pts = nlohmann::json::array();
        for (const Point& q : p.points) pts.push_back({q.x, q.y});
        pseudo.push_back({{"id", p.id}, {"iteration", p.iteration}, {"points", pts}});
    }
    j["pseudo"] = pseudo;
    j["remaining"] = state.remaining_ids;
    nlohmann::json hist = nlohmann::json::array();
    for (const IterationRecord& r : state.history) {
        nlohmann::json sel = nlohmann::json::array();
        for (const SelectedRecord& s : r.selected)
            sel.push_back({{"id", s.id}, {"score", s.score}, {"variance", s.variance}});
        hist.push_back({{"iteration", r.iteration},
                        {"selected", sel},
                        {"metrics",
                         {{"f_source", r.metrics.f_source},
                          {"f_target", r.metrics.f_target},
                          {"precision_target", r.metrics.precision_target},
                          {"recall_target", r.metrics.recall_target},
                          {"n_selected", r.metrics.n_selected}}}});
    }
    j["history"] = hist;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(1) << '\n';
}

std::vector<IterationMetrics> history_rows(const std::vector<IterationRecord>& history) {
    std::vector<IterationMetrics> rows;
    rows.reserve(history.size());
    for (const IterationRecord& r : history) rows.push_back(r.metrics);
    return rows;
}

} // namespace

AdaptationState make_initial_state(const DataSet& ds, const AdaptationConfig& cfg) {
    validate(cfg);
    if (ds.manifest.labeled_source.empty())
        throw ConfigError("dataset has no labeled-source split");
    if (ds.manifest.unlabeled_target.empty())
        throw ConfigError("dataset has no unlabeled-target split");

    AdaptationState state{
        0,
        DetectorModel(cfg.detector_arch, sub_seed(cfg.seed, "detector-init")),
        DiscriminatorModel(cfg.discriminator_arch, sub_seed(cfg.seed, "discriminator-init")),
        {},
        ds.manifest.unlabeled_target,
        {},
        {},
        {}};
    return state;
}

void run_iteration(AdaptationState& state, const DataSet& ds, const ShadowAnnotations& shadow,
                   const AdaptationConfig& cfg, const std::string& run_dir) {
    const int k = state.iteration;
    const auto by_id = index_samples(ds);
    const std::string iter_dir = (fs::path(run_dir) / ("iter_" + std::to_string(k))).string();
    fs::create_directories(iter_dir);

    // Training pool: labeled source plus accumulated pseudo samples.
    std::vector<PatchSample> pool =
        split_samples(ds, by_id, ds.manifest.labeled_source);
    const std::size_t n_labeled = pool.size();
    for (const PseudoLabel& pl : state.pseudo) {
        auto it = by_id.find(pl.id);
        if (it == by_id.end()) throw DataError("pseudo id '" + pl.id + "' not in dataset");
        PatchSample s = *it->second;
        s.points = pl.points;
        s.provenance = Provenance::Pseudo;
        pool.push_back(std::move(s));
    }

    // (a) train or fine-tune the detector on the pool.
    {
        const auto examples = make_detector_examples(pool, cfg.sigma, cfg.amplitude);
        TrainConfig dt = cfg.detector_train;
        dt.seed = iter_seed(cfg.seed, k, "detector");
        if (k > 0) {
            if (cfg.detector_from_scratch)
                state.detector =
                    DetectorModel(cfg.detector_arch, sub_seed(cfg.seed, "detector-init"));
            else
                dt.epochs = cfg.detector_finetune_epochs;
        }
        train_detector(state.detector, examples, dt);
    }

    // (b) train or fine-tune the discriminator on clean/corrupted pairs.
    {
        const std::span<const PatchSample> pair_sources =
            cfg.corrupt_pseudo_negatives
                ? std::span<const PatchSample>(pool)
                : std::span<const PatchSample>(pool.data(), n_labeled);
        PairCorruptionConfig pcc;
        pcc.sigma = cfg.sigma;
        pcc.amplitude = cfg.amplitude;
        const auto pairs =
            make_training_pairs(pair_sources, cfg.neg_per_pos, pcc, iter_seed(cfg.seed, k, "pairs"));
        TrainConfig bt = cfg.discriminator_train;
        bt.seed = iter_seed(cfg.seed, k, "discriminator");
        if (k > 0) bt.epochs = cfg.discriminator_finetune_epochs;
        train_discriminator(state.discriminator, pairs, bt);
    }

    // (c)+(d) predict heatmaps for the remaining pool and regenerate pseudo
    // labels; zero-detection candidates sit this iteration out.
    const std::vector<std::string>& remaining = state.remaining_ids;
    std::vector<std::vector<Point>> peaks(remaining.size());
    std::map<std::string, std::size_t> trip_slot; // first few ids get a triptych
    for (std::size_t i = 0; i < remaining.size() && trip_slot.size() < 3; ++i)
        trip_slot.emplace(remaining[i], trip_slot.size());
    std::vector<Image> trip_pred(trip_slot.size());

#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(remaining.size()); ++i) {
        const PatchSample& s = *by_id.at(remaining[static_cast<std::size_t>(i)]);
        const PositionHeatmap pred =
            predict_heatmap(state.detector, s.image, cfg.sigma, cfg.amplitude);
        peaks[static_cast<std::size_t>(i)] = detect_peaks(pred, cfg.th_d, cfg.nms_radius);
        auto it = trip_slot.find(s.id);
        if (it != trip_slot.end()) trip_pred[it->second] = pred.grid;
    }

    std::vector<PseudoCandidate> candidates;
    for (std::size_t i = 0; i < remaining.size(); ++i) {
        if (peaks[i].empty()) continue;
        PseudoCandidate c;
        c.id = remaining[i];
        c.sample = by_id.at(remaining[i]);
        c.points = std::move(peaks[i]);
        candidates.push_back(std::move(c));
    }

    if (cfg.candidate_subset > 0 &&
        candidates.size() > static_cast<std::size_t>(cfg.candidate_subset)) {
        std::vector<std::size_t> idx(candidates.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng r(iter_seed(cfg.seed, k, "subset"));
        r.shuffle(idx);
        idx.resize(static_cast<std::size_t>(cfg.candidate_subset));
        std::sort(idx.begin(), idx.end());
        std::vector<PseudoCandidate> kept;
        kept.reserve(idx.size());
        for (std::size_t i : idx) kept.push_back(std::move(candidates[i]));
        candidates = std::move(kept);
    }

    // (e) MC-dropout scoring of every candidate.
    const UncertaintyMetric metric = uncertainty_metric_from_string(cfg.uncertainty_metric);
    std::vector<ScoredCandidate> scored;
    if (!candidates.empty()) {
        scored = score_candidates_generated(
            state.discriminator, candidates.size(),
            [&](std::size_t i) {
                const PseudoCandidate& c = candidates[i];
                PairSample p;
                p.id = c.id;
                p.image = c.sample->image;
                p.heatmap = encode_points(c.points, c.sample->image.height,
                                          c.sample->image.width, cfg.sigma, cfg.amplitude);
                return p;
            },
            cfg.T, iter_seed(cfg.seed, k, "mc"), metric);
    }

    // (f)+(g) take the th_u most confident and move them into the pool.
    std::map<std::string, const PseudoCandidate*> cand_by_id;
    for (const PseudoCandidate& c : candidates) cand_by_id[c.id] = &c;
    std::vector<PseudoCandidate> ordered;
    ordered.reserve(scored.size());
    for (const ScoredCandidate& sc : scored) {
        PseudoCandidate c = *cand_by_id.at(sc.id);
        c.uncertainty = sc.uncertainty;
        ordered.push_back(std::move(c));
    }
    const int want = selection_count(cfg, remaining.size());
    const std::vector<PatchSample> selected_samples = select_pseudo(ordered, want);

    IterationRecord rec;
    rec.iteration = k;
    std::set<std::string> selected_ids;
    for (const PatchSample& s : selected_samples) {
        const PseudoCandidate& c = *cand_by_id.at(s.id);
        rec.selected.push_back(
            {s.id, metric_value(c.uncertainty, metric), c.uncertainty.variance});
        selected_ids.insert(s.id);
        state.pseudo.push_back({s.id, *s.points, k});
    }
    std::vector<std::string> still;
    still.reserve(remaining.size());
    for (const std::string& id : remaining)
        if (!selected_ids.count(id)) still.push_back(id);
    state.remaining_ids = std::move(still);

    // (h) evaluate on both test splits and write the iteration artifacts.
    const auto test_source = split_samples(ds, by_id, ds.manifest.test_source);
    const auto test_target = split_samples(ds, by_id, ds.manifest.test_target);
    const SplitEvaluation ev_src = evaluate_model(state.detector, test_source, shadow,
                                                  cfg.d_match, cfg.th_d, cfg.nms_radius,
                                                  cfg.patch_size);
    const SplitEvaluation ev_tgt = evaluate_model(state.detector, test_target, shadow,
                                                  cfg.d_match, cfg.th_d, cfg.nms_radius,
                                                  cfg.patch_size);
    rec.metrics.iteration = k;
    rec.metrics.f_source = ev_src.aggregate.f_score;
    rec.metrics.f_target = ev_tgt.aggregate.f_score;
    rec.metrics.precision_target = ev_tgt.aggregate.precision;
    rec.metrics.recall_target = ev_tgt.aggregate.recall;
    rec.metrics.n_selected = static_cast<int>(selected_samples.size());
    state.history.push_back(std::move(rec));

    // Triptychs: original image, predicted heatmap, regenerated pseudo heatmap.
    for (const auto& [id, slot] : trip_slot) {
        TriptychSample t;
        t.iteration = k;
        t.id = id;
        t.image = by_id.at(id)->image;
        t.predicted = trip_pred[slot];
        auto it = cand_by_id.find(id);
        if (it != cand_by_id.end()) {
            t.pseudo = encode_points(it->second->points, t.image.height, t.image.width,
                                     cfg.sigma, cfg.amplitude)
                           .grid;
        } else {
            t.pseudo = Image(t.image.height, t.image.width);
        }
        state.triptychs.push_back(std::move(t));
    }

    // Feature scatter data from the final iteration's discriminator.
    if (k == cfg.max_iterations - 1) {
        struct Task {
            std::string id;
            int sel_iter;
            const Image* image;
            const std::vector<Point>* points;
        };
        std::vector<Task> tasks;
        for (std::size_t i = 0; i < n_labeled; ++i)
            tasks.push_back({pool[i].id, -2, &pool[i].image, &*pool[i].points});
        std::map<std::string, int> sel_iter_by_id;
        for (const PseudoLabel& p : state.pseudo) sel_iter_by_id[p.id] = p.iteration;
        for (const PseudoLabel& p : state.pseudo)
            tasks.push_back({p.id, p.iteration, &by_id.at(p.id)->image, &p.points});
        for (const PseudoCandidate& c : candidates)
            if (!sel_iter_by_id.count(c.id))
                tasks.push_back({c.id, -1, &c.sample->image, &c.points});

        state.features.assign(tasks.size(), {});
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(tasks.size()); ++i) {
            const Task& t = tasks[static_cast<std::size_t>(i)];
            const PositionHeatmap hm =
                encode_points(*t.points, t.image->height, t.image->width, cfg.sigma,
                              cfg.amplitude);
            FeatureRow row;
            row.id = t.id;
            row.selected_iteration = t.sel_iter;
            row.feature = state.discriminator.features(make_pair_tensor(*t.image, hm.grid));
            state.features[static_cast<std::size_t>(i)] = std::move(row);
        }
    }

    state.iteration = k + 1;

    nn::save_checkpoint(state.detector.to_checkpoint(cfg.config_hash),
                        (fs::path(iter_dir) / "detector.ckpt").string());
    nn::save_checkpoint(state.discriminator.to_checkpoint(cfg.config_hash),
                        (fs::path(iter_dir) / "discriminator.ckpt").string());
    write_scores_csv((fs::path(iter_dir) / "scores.csv").string(), scored);
    write_selected_csv((fs::path(iter_dir) / "selected.csv").string(),
                       state.history.back().selected);
    write_metrics_csv((fs::path(iter_dir) / "metrics.csv").string(), ev_src, ev_tgt);
    write_state_json((fs::path(iter_dir) / "state.json").string(), state, cfg);
    write_report_csv(history_rows(state.history), (fs::path(run_dir) / "report.csv").string());
}

RunReport continue_adaptation(AdaptationState& state, const DataSet& ds,
                              const ShadowAnnotations& shadow, const AdaptationConfig& cfg,
                              const std::string& run_dir) {
    while (state.iteration < cfg.max_iterations)
        run_iteration(state, ds, shadow, cfg, run_dir);

    RunReport report;
    report.run_dir = run_dir;
    report.rows = history_rows(state.history);
    report.features = state.features;
    report.triptychs = state.triptychs;
    report.d_match = cfg.d_match;
    return report;
}

RunReport run_adaptation(const DataSet& ds, const ShadowAnnotations& shadow,
                         const AdaptationConfig& cfg, const std::string& run_dir) {
    AdaptationState state = make_initial_state(ds, cfg);
    if (ds.manifest.test_source.empty() || ds.manifest.test_target.empty())
        throw ConfigError("dataset has no test splits for evaluation");
    fs::create_directories(run_dir);
    return continue_adaptation(state, ds, shadow, cfg, run_dir);
}

AdaptationState resume(const std::string& run_dir, const DataSet& ds,
                       const AdaptationConfig& cfg) {
    validate(cfg);
    int last = -1;
    for (int k = 0;; ++k) {
        if (fs::exists(fs::path(run_dir) / ("iter_" + std::to_string(k)) / "state.json"))
            last = k;
        else
            break;
    }
    if (last < 0)
        throw DataError("resume: no complete iteration checkpoint under " + run_dir);

    const fs::path iter_dir = fs::path(run_dir) / ("iter_" + std::to_string(last));
    for (const char* piece : {"detector.ckpt", "discriminator.ckpt", "selected.csv"})
        if (!fs::exists(iter_dir / piece))
            throw DataError("resume: incomplete checkpoint, missing " +
                            (iter_dir / piece).string());

    std::ifstream in(iter_dir / "state.json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("resume: corrupt state.json: " + std::string(e.what()));
    }
    if (!j.value("complete", false))
        throw DataError("resume: iteration " + std::to_string(last) + " is not complete");
    if (j.value("config_hash", "") != cfg.config_hash)
        throw DataError("resume: run was produced with a different configuration");

    nn::Checkpoint det_ck = nn::load_checkpoint((iter_dir / "detector.ckpt").string());
    nn::Checkpoint dis_ck = nn::load_checkpoint((iter_dir / "discriminator.ckpt").string());
    nn::check_config_hash(det_ck, cfg.config_hash, false);
    nn::check_config_hash(dis_ck, cfg.config_hash, false);

    AdaptationState state{j.at("iteration").get<int>(),
                          DetectorModel::from_checkpoint(det_ck),
                          DiscriminatorModel::from_checkpoint(dis_ck),
                          {},
                          {},
                          {},
                          {},
                          {}};
    for (const auto& p : j.at("pseudo")) {
        PseudoLabel pl;
        pl.id = p.at("id").get<std::string>();
        pl.iteration = p.at("iteration").get<int>();
        for (const auto& q : p.at("points"))
            pl.points.push_back({q.at(0).get<float>(), q.at(1).get<float>()});
        state.pseudo.push_back(std::move(pl));
    }
    state.remaining_ids = j.at("remaining").get<std::vector<std::string>>();
    for (const auto& h : j.at("history")) {
        IterationRecord r;
        r.iteration = h.at("iteration").get<int>();
        for (const auto& s : h.at("selected"))
            r.selected.push_back({s.at("id").get<std::string>(), s.at("score").get<double>(),
                                  s.at("variance").get<double>()});
        const auto& m = h.at("metrics");
        r.metrics.iteration = r.iteration;
        r.metrics.f_source = m.at("f_source").get<double>();
        r.metrics.f_target = m.at("f_target").get<double>();
        r.metrics.precision_target = m.at("precision_target").get<double>();
        r.metrics.recall_target = m.at("recall_target").get<double>();
        r.metrics.n_selected = m.at("n_selected").get<int>();
        state.history.push_back(std::move(r));
    }

    const auto by_id = index_samples(ds);
    for (const std::string& id : state.remaining_ids)
        if (!by_id.count(id))
            throw DataError("resume: remaining id '" + id + "' not in dataset");
    for (const PseudoLabel& p : state.pseudo)
        if (!by_id.count(p.id))
            throw DataError("resume: pseudo id '" + p.id + "' not in dataset");
    return state;
}

BaselineResult train_baseline(const DataSet& ds, const ShadowAnnotations& shadow,
                              const AdaptationConfig& cfg) {
    validate(cfg);
    if (ds.manifest.labeled_source.empty())
        throw ConfigError("dataset has no labeled-source split");
    if (ds.manifest.test_source.empty() || ds.manifest.test_target.empty())
        throw ConfigError("dataset has no test splits for evaluation");

    const auto by_id = index_samples(ds);
    const auto labeled = split_samples(ds, by_id, ds.manifest.labeled_source);
    const auto examples = make_detector_examples(labeled, cfg.sigma, cfg.amplitude);

    // Same seed derivation as adaptation iteration 0, so the two agree.
    DetectorModel detector(cfg.detector_arch, sub_seed(cfg.seed, "detector-init"));
    TrainConfig dt = cfg.detector_train;
    dt.seed = iter_seed(cfg.seed, 0, "detector");
    TrainRecord record = train_detector(detector, examples, dt);

    const auto test_source = split_samples(ds, by_id, ds.manifest.test_source);
    const auto test_target = split_samples(ds, by_id, ds.manifest.test_target);
    const SplitEvaluation ev_src = evaluate_model(detector, test_source, shadow, cfg.d_match,
                                                  cfg.th_d, cfg.nms_radius, cfg.patch_size);
    const SplitEvaluation ev_tgt = evaluate_model(detector, test_target, shadow, cfg.d_match,
                                                  cfg.th_d, cfg.nms_radius, cfg.patch_size);

    BaselineResult res{{}, std::move(record), std::move(detector)};
    res.metrics.iteration = 0;
    res.metrics.f_source = ev_src.aggregate.f_score;
    res.metrics.f_target = ev_tgt.aggregate.f_score;
    res.metrics.precision_target = ev_tgt.aggregate.precision;
    res.metrics.recall_target = ev_tgt.aggregate.recall;
    res.metrics.n_selected = 0;
    return res;
}

} // namespace celladapt

#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "histofuse/config.hpp"
#include "histofuse/core.hpp"
#include "histofuse/dataset.hpp"
#include "histofuse/eval.hpp"
#include "histofuse/fusion.hpp"
#include "histofuse/hashing.hpp"
#include "histofuse/manifold.hpp"
#include "histofuse/parallel.hpp"
#include "histofuse/serialize.hpp"
#include "histofuse/ssae.hpp"
#include "histofuse/synth.hpp"

namespace histofuse {

namespace files {
inline constexpr const char* kManifest = "manifest.csv";
inline constexpr const char* kSplits = "splits.csv";
inline constexpr const char* kSourceRoot = "source_root.txt";
inline constexpr const char* kStain = "stain.bin";
inline constexpr const char* kHashes = "hashes.bin";
inline constexpr const char* kCsml = "csml.bin";
inline constexpr const char* kHolistic = "holistic.bin";
inline constexpr const char* kDca = "dca.bin";
inline constexpr const char* kFused = "fused.bin";
inline constexpr const char* kSsae = "ssae.bin";
inline constexpr const char* kHistory = "history.csv";
inline constexpr const char* kPretrainHistory = "pretrain_history.csv";
inline constexpr const char* kReportCsv = "report.csv";
inline constexpr const char* kReportTxt = "report.txt";
inline constexpr const char* kPatchReport = "patch_report.csv";
inline constexpr const char* kSynthDir = "synth";
}  // namespace files

inline constexpr const char* kHolisticMagic = "HOL1";
inline constexpr const char* kFusedMagic = "FUS1";

struct StageReport {
    std::vector<std::filesystem::path> inputs;
    std::vector<std::filesystem::path> outputs;
    Warnings warnings;
};

namespace detail {

inline std::filesystem::path require(const std::filesystem::path& out, const char* name, const char* stage) {
    const auto p = out / name;
    if (!std::filesystem::exists(p)) {
        throw MissingPrerequisite("missing " + p.string() + "; run the '" + std::string(stage) + "' stage first");
    }
    return p;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MissingPrerequisite("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
}

inline std::string file_digest(const std::filesystem::path& p) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(read_text(p))));
    return buf;
}

// Round-trip-exact decimal rendering.
inline std::string num(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Box average down to side x side.
inline Vector downsample(const Matrix& patch, int side) {
    const auto rows = patch.rows(), cols = patch.cols();
    Vector out(static_cast<Eigen::Index>(side) * side);
    for (int i = 0; i < side; ++i) {
        const Eigen::Index r0 = i * rows / side, r1 = (i + 1) * rows / side;
        for (int j = 0; j < side; ++j) {
            const Eigen::Index c0 = j * cols / side, c1 = (j + 1) * cols / side;
            out(i * side + j) = patch.block(r0, c0, r1 - r0, c1 - c0).mean();
        }
    }
    return out;
}

}  // namespace detail

// State written by `ingest` and shared by every later stage.
struct IngestedData {
    Manifest manifest;
    SplitAssignment splits;
    StainStats stain;

    Split split_of(const std::string& id) const {
        auto it = lookup.find(id);
        if (it == lookup.end()) throw FormatError("image " + id + " missing from " + files::kSplits);
        return it->second;
    }

    std::map<std::string, Split> lookup;
};

inline std::filesystem::path dataset_root(const PipelineConfig& cfg) {
    if (!cfg.root.empty()) return cfg.root;
    return std::filesystem::path(cfg.out) / files::kSynthDir;
}

inline IngestedData load_ingested(const std::filesystem::path& out) {
    IngestedData d;
    const auto manifest_path = detail::require(out, files::kManifest, "ingest");
    const auto root_path = detail::require(out, files::kSourceRoot, "ingest");
    d.manifest = load_manifest(manifest_path.parent_path()).manifest;
    std::string root = detail::read_text(root_path);
    while (!root.empty() && (root.back() == '\n' || root.back() == '\r')) root.pop_back();
    d.manifest.root = root;
    d.splits = read_splits_csv(detail::require(out, files::kSplits, "ingest"));
    d.lookup = d.splits.lookup();
    d.stain = load_stain(detail::require(out, files::kStain, "ingest"));
    return d;
}

inline std::vector<Patch> normalized_patches(const RgbImage& pixels, const std::string& id, const StainStats& stain,
                                             const PipelineConfig& cfg) {
    LabeledImage img{pixels, Subclass::DC, 40, id, ""};
    return extract_patches(stain_normalize(img, stain).image, cfg.patch_size, cfg.patch_stride);
}

inline std::vector<Patch> entry_patches(const IngestedData& d, const ManifestEntry& e, const PipelineConfig& cfg) {
    return normalized_patches(read_image(d.manifest.path_of(e)), e.source_id, d.stain, cfg);
}

// ---------------------------------------------------------------------------
// Stages

inline StageReport run_synth(const PipelineConfig& cfg, std::ostream& log) {
    StageReport rep;
    const auto dir = std::filesystem::path(cfg.out) / files::kSynthDir;
    std::filesystem::remove_all(dir);
    const auto n = write_synth_dataset(dir, cfg.synth, cfg.seed, cfg.threads);
    log << "synth: wrote " << n << " images to " << dir.string() << '\n';
    rep.outputs.push_back(dir);
    return rep;
}

inline StageReport run_ingest(const PipelineConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    StageReport rep;
    const fs::path out = cfg.out;
    const fs::path root = dataset_root(cfg);
    if (!fs::is_directory(root)) {
        throw MissingPrerequisite("dataset root " + root.string() + " does not exist (set dataset.root or run 'synth')");
    }
    auto loaded = load_manifest(root);
    rep.warnings = loaded.warnings;
    Manifest& m = loaded.manifest;
    const auto mags = cfg.magnifications();
    std::erase_if(m.entries, [&](const ManifestEntry& e) {
        return std::find(mags.begin(), mags.end(), e.magnification) == mags.end();
    });

    // Reject images smaller than one patch.
    std::vector<std::string> problems(m.entries.size());
    parallel_for(m.entries.size(), cfg.threads, [&](std::size_t i) {
        try {
            load_image(m, m.entries[i], cfg.patch_size);
        } catch (const Error& e) {
            problems[i] = e.what();
        }
    });
    std::vector<ManifestEntry> kept;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        if (problems[i].empty()) kept.push_back(m.entries[i]);
        else rep.warnings.push_back("rejected: " + problems[i]);
    }
    m.entries = std::move(kept);
    if (m.entries.empty()) throw Error("no usable images for magnification '" + cfg.magnification + "'");

    auto split = split_dataset(m, {cfg.train_ratio, cfg.val_ratio, cfg.test_ratio}, cfg.seed);
    for (auto& w : split.warnings) rep.warnings.push_back(w);
    const auto lookup = split.assignment.lookup();
    auto ref = std::find_if(m.entries.begin(), m.entries.end(),
                            [&](const ManifestEntry& e) { return lookup.at(e.source_id) == Split::Train; });
    if (ref == m.entries.end()) throw Error("training split is empty");
    const StainStats stain = stain_stats(read_image(m.path_of(*ref)));

    fs::create_directories(out);
    write_manifest_csv(out / files::kManifest, m);
    write_splits_csv(out / files::kSplits, split.assignment);
    detail::write_text(out / files::kSourceRoot, fs::absolute(root).lexically_normal().string() + "\n");
    save_stain(out / files::kStain, stain, ref->source_id);
    log << "ingest: " << m.entries.size() << " images (train " << split.assignment.train.size() << ", val "
        << split.assignment.val.size() << ", test " << split.assignment.test.size() << "); stain reference "
        << ref->source_id << '\n';
    rep.inputs.push_back(root);
    rep.outputs = {out / files::kManifest, out / files::kSplits, out / files::kSourceRoot, out / files::kStain};
    return rep;
}

inline StageReport run_hash(const PipelineConfig& cfg, std::ostream& log) {
    const std::filesystem::path out = cfg.out;
    StageReport rep;
    const IngestedData d = load_ingested(out);
    std::vector<std::vector<HashRecord>> per_image(d.manifest.entries.size());
    parallel_for(d.manifest.entries.size(), cfg.threads, [&](std::size_t i) {
        for (const auto& p : entry_patches(d, d.manifest.entries[i], cfg)) {
            per_image[i].push_back({p.parent, static_cast<std::uint32_t>(p.row), static_cast<std::uint32_t>(p.col),
                                    local_signature(p.pixels, cfg.hash).values});
        }
    });
    HashCache cache;
    cache.layout = hash_layout(cfg.hash, cfg.patch_size);
    for (auto& recs : per_image) {
        for (auto& r : recs) cache.records.push_back(std::move(r));
    }
    save_hash_cache(out / files::kHashes, cache);
    log << "hash: " << cache.records.size() << " patches, layout (" << cache.layout.dwt << ", " << cache.layout.svd
        << ", " << cache.layout.fp << ")\n";
    rep.inputs = {out / files::kManifest, out / files::kStain};
    rep.outputs = {out / files::kHashes};
    return rep;
}

inline StageReport run_manifold(const PipelineConfig& cfg, std::ostream& log) {
    const std::filesystem::path out = cfg.out;
    StageReport rep;
    const IngestedData d = load_ingested(out);
    const auto& entries = d.manifest.entries;

    // Downsampled patch vectors for every image.
    std::vector<std::vector<FeatureRecord>> per_image(entries.size());
    parallel_for(entries.size(), cfg.threads, [&](std::size_t i) {
        for (const auto& p : entry_patches(d, entries[i], cfg)) {
            per_image[i].push_back({p.parent, static_cast<std::uint32_t>(p.row), static_cast<std::uint32_t>(p.col),
                                    entries[i].subclass, entries[i].magnification,
                                    detail::downsample(p.pixels, cfg.manifold_downsample)});
        }
    });

    std::map<Subclass, std::vector<const Vector*>> by_class;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (d.split_of(entries[i].source_id) != Split::Train) continue;
        for (const auto& r : per_image[i]) by_class[entries[i].subclass].push_back(&r.values);
    }
    std::vector<Subclass> classes;
    for (const auto& [s, v] : by_class) classes.push_back(s);
    std::vector<CsmlFit> fits(classes.size());
    parallel_for(classes.size(), cfg.threads, [&](std::size_t c) {
        const auto& vecs = by_class.at(classes[c]);
        Matrix x(vecs.front()->size(), static_cast<Eigen::Index>(vecs.size()));
        for (std::size_t j = 0; j < vecs.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = *vecs[j];
        fits[c] = fit_csml(x, classes[c], cfg.manifold, derive_seed(cfg.seed, "csml/" + std::string(to_string(classes[c]))));
    });
    std::vector<CsmlModel> models;
    for (auto& f : fits) {
        for (auto& w : f.warnings) rep.warnings.push_back(w);
        models.push_back(std::move(f.model));
    }
    save_csml(out / files::kCsml, models);

    // Holistic features for every patch.
    std::vector<FeatureRecord> holistic;
    for (auto& recs : per_image) {
        for (auto& r : recs) holistic.push_back(std::move(r));
    }
    parallel_for(holistic.size(), cfg.threads, [&](std::size_t i) {
        holistic[i].values = csml_transform(models, holistic[i].values, cfg.manifold.k_infer);
    });
    save_features(out / files::kHolistic, kHolisticMagic, holistic);
    log << "manifold: " << models.size() << " class models, holistic dim "
        << (holistic.empty() ? 0 : holistic.front().values.size()) << '\n';
    rep.inputs = {out / files::kManifest, out / files::kSplits, out / files::kStain};
    rep.outputs = {out / files::kCsml, out / files::kHolistic};
    return rep;
}

inline StageReport run_fuse(const PipelineConfig& cfg, std::ostream& log) {
    const std::filesystem::path out = cfg.out;
    StageReport rep;
    const IngestedData d = load_ingested(out);
    auto holistic = load_features(detail::require(out, files::kHolistic, "manifold"), kHolisticMagic);
    const HashCache hashes = load_hash_cache(detail::require(out, files::kHashes, "hash"));
    if (holistic.size() != hashes.records.size()) {
        throw FormatError("hash and manifold artifacts cover different patch sets; rerun both stages");
    }
    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < holistic.size(); ++i) {
        const auto& h = holistic[i];
        const auto& r = hashes.records[i];
        if (h.source_id != r.source_id || h.row != r.row || h.col != r.col) {
            throw FormatError("hash and manifold artifacts disagree at patch " + std::to_string(i) + "; rerun both stages");
        }
        if (d.split_of(h.source_id) == Split::Train) train_idx.push_back(i);
    }
    if (train_idx.empty()) throw Error("no training patches");

    const Eigen::Index p = holistic.front().values.size();
    const Eigen::Index q = hashes.layout.total();
    Matrix x(p, static_cast<Eigen::Index>(train_idx.size())), y(q, x.cols());
    std::vector<int> labels(train_idx.size());
    std::set<int> classes;
    for (std::size_t j = 0; j < train_idx.size(); ++j) {
        x.col(static_cast<Eigen::Index>(j)) = holistic[train_idx[j]].values;
        y.col(static_cast<Eigen::Index>(j)) = hashes.records[train_idx[j]].values;
        labels[j] = static_cast<int>(index_of(holistic[train_idx[j]].subclass));
        classes.insert(labels[j]);
    }
    const int rank = cfg.dca_rank > 0 ? cfg.dca_rank : static_cast<int>(classes.size()) - 1;
    DcaFit fit;
    if (cfg.dca_standardize) {
        // z-score each stream on training statistics, then fold the scaling
        // back into the transforms so the model applies to raw features.
        const auto [mx, sx] = fit_standardizer(x);
        const auto [my, sy] = fit_standardizer(y);
        x = ((x.colwise() - mx).array().colwise() / sx.array()).matrix();
        y = ((y.colwise() - my).array().colwise() / sy.array()).matrix();
        fit = fit_dca(x, y, labels, rank);
        fit.model.wx = fit.model.wx * sx.cwiseInverse().asDiagonal();
        fit.model.wy = fit.model.wy * sy.cwiseInverse().asDiagonal();
        fit.model.mean_x = mx + sx.cwiseProduct(fit.model.mean_x);
        fit.model.mean_y = my + sy.cwiseProduct(fit.model.mean_y);
    } else {
        fit = fit_dca(x, y, labels, rank);
    }
    rep.warnings = fit.warnings;
    save_dca(out / files::kDca, fit.model);

    std::vector<FeatureRecord> fused(holistic.size());
    parallel_for(holistic.size(), cfg.threads, [&](std::size_t i) {
        fused[i] = holistic[i];
        fused[i].values = dca_transform(fit.model, holistic[i].values, hashes.records[i].values);
    });
    save_features(out / files::kFused, kFusedMagic, fused);
    log << "fuse: rank " << fit.model.rank() << ", " << fused.size() << " fused vectors of length "
        << 2 * fit.model.rank() << '\n';
    rep.inputs = {out / files::kHolistic, out / files::kHashes, out / files::kSplits};
    rep.outputs = {out / files::kDca, out / files::kFused};
    return rep;
}

inline StageReport run_train(const PipelineConfig& cfg, std::ostream& log) {
    const std::filesystem::path out = cfg.out;
    StageReport rep;
    const IngestedData d = load_ingested(out);
    const auto fused = load_features(detail::require(out, files::kFused, "fuse"), kFusedMagic);

    std::set<Subclass> present;
    for (const auto& r : fused) {
        if (d.split_of(r.source_id) == Split::Train) present.insert(r.subclass);
    }
    std::vector<Subclass> class_order;
    for (auto s : kAllSubclasses) {
        if (present.count(s)) class_order.push_back(s);
    }
    if (class_order.size() < 2) throw Error("training needs at least two classes");
    std::map<Subclass, int> label_of;
    for (std::size_t i = 0; i < class_order.size(); ++i) label_of[class_order[i]] = static_cast<int>(i);

    auto gather = [&](Split which) {
        std::vector<const FeatureRecord*> recs;
        for (const auto& r : fused) {
            if (d.split_of(r.source_id) == which && label_of.count(r.subclass)) recs.push_back(&r);
        }
        LabeledSet set;
        set.x.resize(fused.front().values.size(), static_cast<Eigen::Index>(recs.size()));
        for (std::size_t j = 0; j < recs.size(); ++j) {
            set.x.col(static_cast<Eigen::Index>(j)) = recs[j]->values;
            set.y.push_back(label_of.at(recs[j]->subclass));
        }
        return set;
    };
    LabeledSet train = gather(Split::Train);
    LabeledSet val = gather(Split::Val);
    const auto [mean, scale] = fit_standardizer(train.x);
    auto standardize = [&](Matrix& x) { x = ((x.colwise() - mean).array().colwise() / scale.array()).matrix(); };
    standardize(train.x);
    if (val.x.cols() > 0) standardize(val.x);

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    SsaeTraining t = train_ssae(train, val, class_order, tc);
    t.result.model.input_mean = mean;
    t.result.model.input_scale = scale;
    rep.warnings = t.result.warnings;
    save_ssae(out / files::kSsae, t.result.model);

    std::ostringstream hist;
    hist << "epoch,train_loss,train_acc,val_acc,lr\n";
    for (const auto& h : t.result.history) {
        hist << h.epoch << ',' << detail::num(h.train_loss) << ',' << detail::num(h.train_acc) << ','
             << detail::num(h.val_acc) << ',' << detail::num(h.lr) << '\n';
    }
    detail::write_text(out / files::kHistory, hist.str());
    std::ostringstream pre;
    pre << "layer,epoch,loss,lr\n";
    for (const auto& [layer, rows] : {std::pair{1, &t.pretrain1}, std::pair{2, &t.pretrain2}}) {
        for (const auto& h : *rows) pre << layer << ',' << h.epoch << ',' << detail::num(h.loss) << ',' << detail::num(h.lr) << '\n';
    }
    detail::write_text(out / files::kPretrainHistory, pre.str());

    const auto& best = t.result.history[static_cast<std::size_t>(t.result.best_epoch)];
    log << "train: " << train.x.cols() << " train / " << val.x.cols() << " val patches, " << t.result.history.size()
        << " epochs, best epoch " << t.result.best_epoch << " (train acc " << best.train_acc << ", val acc "
        << detail::num(best.val_acc) << ")\n";
    rep.inputs = {out / files::kFused, out / files::kSplits};
    rep.outputs = {out / files::kSsae, out / files::kHistory, out / files::kPretrainHistory};
    return rep;
}

// Image-level prediction: mean of patch softmax vectors, then argmax.
struct ImagePrediction {
    std::string source_id;
    Subclass truth = Subclass::DC;
    int magnification = 40;
    Vector probs;
    Subclass predicted = Subclass::DC;
};

inline Subclass predicted_class(const SsaeModel& model, const Vector& probs) {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    return model.class_order[static_cast<std::size_t>(best)];
}

inline StageReport run_evaluate(const PipelineConfig& cfg, std::ostream& log) {
    const std::filesystem::path out = cfg.out;
    StageReport rep;
    const IngestedData d = load_ingested(out);
    const SsaeModel model = load_ssae(detail::require(out, files::kSsae, "train"));
    const auto fused = load_features(detail::require(out, files::kFused, "fuse"), kFusedMagic);

    std::vector<const FeatureRecord*> test;
    for (const auto& r : fused) {
        if (d.split_of(r.source_id) == Split::Test) test.push_back(&r);
    }
    if (test.empty()) throw Error("test split is empty");
    Matrix x(test.front()->values.size(), static_cast<Eigen::Index>(test.size()));
    for (std::size_t j = 0; j < test.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = test[j]->values;
    const Matrix probs = predict_batch(model, x);

    std::vector<ImagePrediction> images;
    std::vector<int> patch_count;
    std::map<std::string, std::size_t> slot;
    for (std::size_t j = 0; j < test.size(); ++j) {
        auto [it, fresh] = slot.try_emplace(test[j]->source_id, images.size());
        if (fresh) {
            images.push_back({test[j]->source_id, test[j]->subclass, test[j]->magnification, Vector::Zero(probs.rows())});
            patch_count.push_back(0);
        }
        images[it->second].probs += probs.col(static_cast<Eigen::Index>(j));
        ++patch_count[it->second];
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
        images[i].probs /= patch_count[i];
        images[i].predicted = predicted_class(model, images[i].probs);
    }

    std::vector<std::string> subclass_names, binary_names{"benign", "malignant"};
    for (auto s : kAllSubclasses) subclass_names.emplace_back(to_string(s));
    auto tally = [&](auto truth_of, auto pred_of, const std::vector<std::string>& order, int mag, std::size_t n, auto mag_of) {
        std::vector<std::string> t, p;
        for (std::size_t i = 0; i < n; ++i) {
            if (mag_of(i) != mag) continue;
            t.push_back(truth_of(i));
            p.push_back(pred_of(i));
        }
        return confusion(t, p, order);
    };

    std::set<int> mags;
    for (const auto& im : images) mags.insert(im.magnification);
    MetricsReport report, patch_report;
    std::vector<std::pair<std::string, ConfusionMatrix>> dumps;
    for (Task task : {Task::Binary, Task::Multiclass}) {
        if (!cfg.wants(task)) continue;
        const bool bin = task == Task::Binary;
        const auto& order = bin ? binary_names : subclass_names;
        auto name = [&](Subclass s) { return std::string(bin ? to_string(binary_class(s)) : to_string(s)); };
        for (int mag : mags) {
            const auto cm = tally([&](std::size_t i) { return name(images[i].truth); },
                                  [&](std::size_t i) { return name(images[i].predicted); }, order, mag, images.size(),
                                  [&](std::size_t i) { return images[i].magnification; });
            report.cells.push_back(bin ? binary_cell(mag, cm) : multiclass_cell(mag, cm));
            dumps.emplace_back(std::string("confusion_") + std::string(to_string(task)) + "_" + std::to_string(mag) + ".csv", cm);
            if (cfg.patch_level) {
                const auto pcm = tally([&](std::size_t j) { return name(test[j]->subclass); },
                                       [&](std::size_t j) { return name(predicted_class(model, probs.col(static_cast<Eigen::Index>(j)))); },
                                       order, mag, test.size(), [&](std::size_t j) { return test[j]->magnification; });
                patch_report.cells.push_back(bin ? binary_cell(mag, pcm) : multiclass_cell(mag, pcm));
            }
        }
    }
    detail::write_text(out / files::kReportCsv, render_csv(report));
    detail::write_text(out / files::kReportTxt, render_text(report));
    rep.outputs = {out / files::kReportCsv, out / files::kReportTxt};
    for (const auto& [file, cm] : dumps) {
        detail::write_text(out / file, render_confusion_csv(cm));
        rep.outputs.push_back(out / file);
    }
    if (cfg.patch_level) {
        detail::write_text(out / files::kPatchReport, render_csv(patch_report));
        rep.outputs.push_back(out / files::kPatchReport);
    }
    log << "evaluate: " << images.size() << " test images (" << test.size() << " patches)\n" << render_text(report);
    rep.inputs = {out / files::kSsae, out / files::kFused, out / files::kSplits};
    return rep;
}

// Classifies image files with the trained pipeline; writes one CSV row per image.
inline StageReport run_predict(const PipelineConfig& cfg, const std::vector<std::filesystem::path>& paths,
                               std::ostream& result, std::ostream& log) {
    const std::filesystem::path out = cfg.out;
    StageReport rep;
    if (paths.empty()) throw ConfigError("predict needs at least one image path");
    const StainStats stain = load_stain(detail::require(out, files::kStain, "ingest"));
    const auto models = load_csml(detail::require(out, files::kCsml, "manifold"));
    const DcaModel dca = load_dca(detail::require(out, files::kDca, "fuse"));
    const SsaeModel model = load_ssae(detail::require(out, files::kSsae, "train"));

    std::vector<Vector> probs(paths.size());
    parallel_for(paths.size(), cfg.threads, [&](std::size_t i) {
        const auto patches = normalized_patches(read_image(paths[i]), paths[i].string(), stain, cfg);
        Matrix x(2 * dca.rank(), static_cast<Eigen::Index>(patches.size()));
        for (std::size_t j = 0; j < patches.size(); ++j) {
            const Vector hol = csml_transform(models, detail::downsample(patches[j].pixels, cfg.manifold_downsample),
                                              cfg.manifold.k_infer);
            x.col(static_cast<Eigen::Index>(j)) = dca_transform(dca, hol, local_signature(patches[j].pixels, cfg.hash).values);
        }
        probs[i] = predict_batch(model, x).rowwise().mean();
    });
    result << "path,subclass,class";
    for (auto s : model.class_order) result << ",p_" << to_string(s);
    result << '\n';
    for (std::size_t i = 0; i < paths.size(); ++i) {
        const Subclass s = predicted_class(model, probs[i]);
        result << paths[i].string() << ',' << to_string(s) << ',' << to_string(binary_class(s));
        for (Eigen::Index c = 0; c < probs[i].size(); ++c) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", probs[i](c));
            result << ',' << buf;
        }
        result << '\n';
    }
    log << "predict: " << paths.size() << " image(s)\n";
    rep.inputs = {out / files::kStain, out / files::kCsml, out / files::kDca, out / files::kSsae};
    return rep;
}

// ---------------------------------------------------------------------------
// Run manifests

inline void write_run_manifest(const PipelineConfig& cfg, const std::string& command, const StageReport& rep,
                               double seconds) {
    namespace fs = std::filesystem;
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config_hash"] = config_hash(cfg);
    j["config"] = config_json(cfg);
    nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
    for (const auto& p : rep.inputs) {
        if (fs::is_regular_file(p)) inputs[p.string()] = detail::file_digest(p);
        else if (fs::exists(p / files::kManifest)) inputs[p.string()] = detail::file_digest(p / files::kManifest);
        else inputs[p.string()] = nullptr;
    }
    j["inputs"] = inputs;
    nlohmann::ordered_json outputs = nlohmann::ordered_json::object();
    for (const auto& p : rep.outputs) outputs[p.string()] = fs::is_regular_file(p) ? nlohmann::ordered_json(detail::file_digest(p)) : nullptr;
    j["outputs"] = outputs;
    j["wall_time_s"] = seconds;
    j["warnings"] = rep.warnings;
    fs::create_directories(cfg.out);
    detail::write_text(fs::path(cfg.out) / ("run_" + command + ".json"), j.dump(2) + "\n");
}

inline const std::vector<std::string>& pipeline_commands() {
    static const std::vector<std::string> cmds{"synth", "ingest", "hash", "manifold", "fuse", "train", "evaluate", "predict"};
    return cmds;
}

// Runs one command, records its manifest, and echoes warnings to `log`.
inline StageReport run_command(const std::string& command, const PipelineConfig& cfg, std::ostream& log,
                               const std::vector<std::filesystem::path>& predict_paths = {},
                               std::ostream& result = std::cout) {
    const auto start = std::chrono::steady_clock::now();
    StageReport rep;
    if (command == "synth") rep = run_synth(cfg, log);
    else if (command == "ingest") rep = run_ingest(cfg, log);
    else if (command == "hash") rep = run_hash(cfg, log);
    else if (command == "manifold") rep = run_manifold(cfg, log);
    else if (command == "fuse") rep = run_fuse(cfg, log);
    else if (command == "train") rep = run_train(cfg, log);
    else if (command == "evaluate") rep = run_evaluate(cfg, log);
    else if (command == "predict") rep = run_predict(cfg, predict_paths, result, log);
    else throw ConfigError("unknown command '" + command + "'");
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& w : rep.warnings) log << "warning: " << w << '\n';
    write_run_manifest(cfg, command, rep, seconds);
    return rep;
}

}  // namespace histofuse

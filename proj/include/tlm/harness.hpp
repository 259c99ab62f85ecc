#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "tlm/committee.hpp"
#include "tlm/config.hpp"
#include "tlm/report.hpp"
#include "tlm/synth.hpp"
#include "tlm/train.hpp"

namespace tlm {

/// Classification data resolved from an experiment spec: the (optionally
/// reduced) split and its token set T_C.
struct ResolvedData {
    ClassificationDataset dataset;
    TokenSet t_c;
};

inline ResolvedData resolve_dataset(const ExperimentSpec& spec, const Vocab& vocab) {
    ResolvedData out;
    out.dataset = load_classification_dataset(spec.train_path, spec.test_path);
    if (spec.reduce_train_per_label > 0 || spec.reduce_test_per_label > 0)
        out.dataset = reduce_classification_dataset(out.dataset, spec.reduce_train_per_label,
                                                    spec.reduce_test_per_label, spec.reduce_seed);
    out.t_c = extract_token_set(out.dataset, vocab);
    return out;
}

inline CorpusSubset build_subset(const ExperimentSpec& spec, const Corpus& corpus,
                                 const TokenSet& t_c) {
    switch (spec.subset_kind) {
        case SubsetKind::custom:
            return build_custom_subset(corpus, t_c);
        case SubsetKind::random:
            return sample_random_subset(corpus, spec.subset_size, spec.subset_seed);
        default:
            return build_inflated_tm_subset(corpus, t_c, spec.exclusion_fraction, spec.filler_budget);
    }
}

/// Vocabulary for one experiment. Reduced mode keeps the subset's tokens
/// plus the task's tokens (so missing tokens still get trainable, if
/// untrained, embeddings) plus the specials; full mode is the identity.
inline VocabMap make_vocab_map(const ExperimentSpec& spec, const CorpusSubset& subset,
                               const TokenSet& t_c, const Vocab& vocab) {
    if (!spec.reduced_vocab) return VocabMap::identity(vocab);
    TokenSet keep;
    keep.ids = subset.t_w.ids;
    for (int32_t id : t_c.ids)
        if (!std::binary_search(keep.ids.begin(), keep.ids.end(), id)) keep.ids.push_back(id);
    std::sort(keep.ids.begin(), keep.ids.end());
    return VocabMap::reduced(keep, vocab);
}

template <typename T = float>
struct GapOutcome {
    ExperimentReport report;
    std::vector<Model<T>> pretrained_models;  // best fine-tuned model per repetition
    std::vector<TrainMeta> pretrain_meta;
};

/// One gap experiment: pre-train on the subset, fine-tune, compare with the
/// same architecture trained from scratch, averaged over repetitions.
/// Repetition r shifts every training seed by r; the subset itself is fixed
/// so every repetition sees the same T_W and T_M.
template <typename T = float>
GapOutcome<T> run_gap_experiment(const ExperimentSpec& spec, const Vocab& vocab,
                                 bool keep_models = false) {
    const auto t0 = std::chrono::steady_clock::now();
    GapOutcome<T> out;

    const ResolvedData data = resolve_dataset(spec, vocab);
    Corpus corpus;
    if (!spec.corpus_path.empty()) corpus = ingest_paragraphs(spec.corpus_path, vocab);

    CorpusSubset subset;
    if (!corpus.paragraphs.empty()) subset = build_subset(spec, corpus, data.t_c);
    const bool pretrain_arm = !subset.indices.empty();

    out.report.overlap = compute_overlap_metrics(subset, data.t_c);
    out.report.has_pretrained_arm = pretrain_arm;
    out.report.config_hash = experiment_config_hash(spec);
    out.report.subset_hash = pretrain_arm ? subset_manifest_hash(subset) : "";

    const VocabMap vmap = make_vocab_map(spec, subset, data.t_c, vocab);
    ModelConfig cfg = spec.model;
    cfg.vocab_size = vmap.sub_size();
    cfg.num_labels = static_cast<size_t>(data.dataset.n_labels);
    cfg.validate();
    out.report.model_latency = latency(cfg);

    std::vector<double> label_acc_sum(cfg.num_labels, 0.0);
    for (size_t rep = 0; rep < spec.repetitions; ++rep) {
        out.report.seeds.push_back(spec.finetune_cfg.seed + rep);
        EvalResult headline_eval;

        if (pretrain_arm) {
            TrainConfig pc = spec.pretrain_cfg;
            pc.seed += rep;
            const PretrainResult<T> pre = pretrain<T>(corpus, subset, cfg, pc, vocab, vmap);
            const LoadedCheckpoint<T> ck =
                decode_checkpoint<T>(encode_checkpoint(pre.model, pre.meta), "<pretrained>");
            TrainConfig fc = spec.finetune_cfg;
            fc.seed += rep;
            FinetuneResult<T> ft = finetune<T>(data.dataset, cfg, fc, vocab, vmap, &ck);
            out.report.acc_pretrained.values.push_back(ft.best_accuracy);
            headline_eval = ft.best_eval;
            if (keep_models) {
                out.pretrained_models.push_back(std::move(ft.model));
                out.pretrain_meta.push_back(pre.meta);
            }
        }

        TrainConfig sc = spec.scratch_cfg;
        sc.seed += rep;
        FinetuneResult<T> scratch = finetune<T>(data.dataset, cfg, sc, vocab, vmap);
        out.report.acc_scratch.values.push_back(scratch.best_accuracy);
        if (!pretrain_arm) headline_eval = scratch.best_eval;

        for (size_t l = 0; l < cfg.num_labels; ++l)
            label_acc_sum[l] += headline_eval.per_label_accuracy[l];
    }

    out.report.per_label_accuracy.resize(cfg.num_labels);
    for (size_t l = 0; l < cfg.num_labels; ++l)
        out.report.per_label_accuracy[l] = label_acc_sum[l] / static_cast<double>(spec.repetitions);
    out.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Committee experiments: several member architectures, each trained
// independently (optionally from a pre-trained encoder), voting by raw
// logit summation.
// ---------------------------------------------------------------------------

struct CommitteeExperimentSpec {
    ExperimentSpec base;                    // data, subset recipe, training arms
    std::vector<ModelConfig> member_models; // architecture per member
    bool pretrain_members = false;
};

/// Committee config: the shared keys of an experiment spec plus numbered
/// member blocks (member.K.blocks, member.K.heads, member.K.head_dim,
/// member.K.conv) and committee.pretrain.
inline CommitteeExperimentSpec parse_committee_spec(const KvDoc& doc) {
    CommitteeExperimentSpec s;
    s.base = parse_experiment_spec(doc);
    s.pretrain_members = doc.get_bool("committee.pretrain", false);
    for (size_t k = 0;; ++k) {
        const std::string prefix = "member." + std::to_string(k) + ".";
        if (!doc.has(prefix + "blocks") && !doc.has(prefix + "heads")) break;
        ModelConfig m = s.base.model;
        m.blocks = doc.get_u64(prefix + "blocks", m.blocks);
        m.heads = doc.get_u64(prefix + "heads", m.heads);
        m.head_dim = doc.get_u64(prefix + "head_dim", m.head_dim);
        m.hidden = m.heads * m.head_dim;
        m.conv_layers = parse_conv_layers(doc.get(prefix + "conv", "none"));
        s.member_models.push_back(m);
    }
    if (s.member_models.empty()) throw DataError("committee config declares no members");
    return s;
}

inline CommitteeExperimentSpec load_committee_spec(const std::string& path) {
    return parse_committee_spec(KvDoc::load(path));
}

template <typename T = float>
CommitteeReport run_committee_experiment(const CommitteeExperimentSpec& spec, const Vocab& vocab) {
    const auto t0 = std::chrono::steady_clock::now();
    const ResolvedData data = resolve_dataset(spec.base, vocab);

    Corpus corpus;
    CorpusSubset subset;
    if (spec.pretrain_members) {
        if (spec.base.corpus_path.empty())
            throw DataError("committee.pretrain needs a corpus");
        corpus = ingest_paragraphs(spec.base.corpus_path, vocab);
        subset = build_subset(spec.base, corpus, data.t_c);
        if (subset.indices.empty()) throw DataError("committee pre-training subset is empty");
    }
    const VocabMap vmap = make_vocab_map(spec.base, subset, data.t_c, vocab);

    CommitteeReport report;
    report.config_hash = experiment_config_hash(spec.base);
    std::vector<Model<T>> members;
    for (size_t k = 0; k < spec.member_models.size(); ++k) {
        ModelConfig cfg = spec.member_models[k];
        cfg.vocab_size = vmap.sub_size();
        cfg.num_labels = static_cast<size_t>(data.dataset.n_labels);
        cfg.validate();

        TrainConfig fc = spec.base.finetune_cfg;
        fc.seed += k;  // members are independent runs
        report.seeds.push_back(fc.seed);

        FinetuneResult<T> ft = [&] {
            if (!spec.pretrain_members) return finetune<T>(data.dataset, cfg, fc, vocab, vmap);
            TrainConfig pc = spec.base.pretrain_cfg;
            pc.seed += k;
            const PretrainResult<T> pre = pretrain<T>(corpus, subset, cfg, pc, vocab, vmap);
            const LoadedCheckpoint<T> ck =
                decode_checkpoint<T>(encode_checkpoint(pre.model, pre.meta), "<pretrained>");
            return finetune<T>(data.dataset, cfg, fc, vocab, vmap, &ck);
        }();
        report.members.push_back({cfg, ft.best_accuracy});
        members.push_back(std::move(ft.model));
    }

    const std::vector<VocabMap> vmaps(members.size(), vmap);
    const CommitteeEval vote = committee_evaluate(members, vmaps, data.dataset.test, vocab,
                                                  spec.base.finetune_cfg.batch_size);
    report.committee_accuracy = vote.accuracy;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace tlm

// tlm: pre-train tiny BERT-style models on token-filtered corpus subsets,
// fine-tune them on classification tasks and measure the pre-training gap.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tlm/harness.hpp"

namespace {

using namespace tlm;

std::string data_root() {
    const char* env = std::getenv("TLM_DATA_ROOT");
    return env && *env ? env : ".";
}

// Paths given on the command line are used as written.  Relative paths read
// from config or manifest files resolve against TLM_DATA_ROOT so that presets
// shipped with the project work from any working directory.
std::string resolve(const std::string& path) {
    if (path.empty() || path.front() == '/') return path;
    return data_root() + "/" + path;
}

void resolve_spec_paths(ExperimentSpec& spec) {
    if (!spec.corpus_path.empty()) spec.corpus_path = resolve(spec.corpus_path);
    spec.train_path = resolve(spec.train_path);
    spec.test_path = resolve(spec.test_path);
}

Vocab load_vocab(const std::string& vocab_path) {
    if (vocab_path.empty())
        return Vocab::load(data_root() + "/data/vocab/wordpiece_30522.txt");
    return Vocab::load(vocab_path);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write output file: " + path);
    f << text;
}

void emit_output(const std::string& text, const std::string& out_path) {
    if (out_path.empty())
        std::fputs(text.c_str(), stdout);
    else
        write_text(out_path, text);
}

struct CommonOpts {
    std::string config_path;
    std::string vocab_path;
    bool deterministic = false;
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_config = true) {
    auto* c = cmd->add_option("--config", opts.config_path, "experiment config file");
    if (needs_config) c->required();
    cmd->add_option("--vocab", opts.vocab_path,
                    "vocabulary file (default: <data root>/data/vocab/wordpiece_30522.txt)");
    cmd->add_flag("--deterministic", opts.deterministic,
                  "bit-reproducible output: single-threaded math, timing fields zeroed");
    cmd->add_option("--seed", opts.seed, "override the training seeds from the config");
}

ExperimentSpec load_spec(const CommonOpts& opts) {
    ExperimentSpec spec = load_experiment_spec(opts.config_path);
    resolve_spec_paths(spec);
    if (opts.seed >= 0) {
        spec.pretrain_cfg.seed = static_cast<uint64_t>(opts.seed);
        spec.finetune_cfg.seed = static_cast<uint64_t>(opts.seed);
        spec.scratch_cfg.seed = static_cast<uint64_t>(opts.seed);
    }
    return spec;
}

ReportFormat parse_format(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    throw DataError("unknown report format '" + s + "' (want csv or markdown)");
}

// ---------------------------------------------------------------------------

int cmd_synth_gen(const std::string& corpus_out, const std::string& train_out,
                  const std::string& test_out, const SynthConfig& cfg, const CommonOpts& opts) {
    const Vocab vocab = load_vocab(opts.vocab_path);
    const SynthData data = generate_synthetic(cfg, vocab);
    write_lines(corpus_out, data.corpus_lines);
    write_instances(train_out, data.dataset.train);
    write_instances(test_out, data.dataset.test);
    std::printf("wrote %zu corpus paragraphs, %zu train and %zu test instances (%d labels)\n",
                data.corpus_lines.size(), data.dataset.train.size(), data.dataset.test.size(),
                data.dataset.n_labels);
    return 0;
}

int cmd_build_subset(const CommonOpts& opts, const std::string& manifest_out) {
    const ExperimentSpec spec = load_spec(opts);
    const Vocab vocab = load_vocab(opts.vocab_path);
    if (spec.corpus_path.empty()) throw DataError("config has no corpus path");
    const Corpus corpus = ingest_paragraphs(spec.corpus_path, vocab);
    const ResolvedData data = resolve_dataset(spec, vocab);
    const CorpusSubset subset = build_subset(spec, corpus, data.t_c);
    write_subset_manifest(manifest_out, subset);
    std::printf("kind %s\nW_S %zu\nT_W %zu\nmanifest_hash %s\n",
                subset_kind_name(subset.provenance.kind), subset.w_s(), subset.t_w.ids.size(),
                subset_manifest_hash(subset).c_str());
    if (subset.empty_warning) std::printf("warning subset is empty\n");
    return 0;
}

int cmd_overlap(const CommonOpts& opts, const std::string& manifest_path) {
    const ExperimentSpec spec = load_spec(opts);
    const Vocab vocab = load_vocab(opts.vocab_path);
    if (spec.corpus_path.empty()) throw DataError("config has no corpus path");
    const Corpus corpus = ingest_paragraphs(spec.corpus_path, vocab);
    const ResolvedData data = resolve_dataset(spec, vocab);
    const CorpusSubset subset = manifest_path.empty()
                                    ? build_subset(spec, corpus, data.t_c)
                                    : load_subset_manifest(manifest_path, corpus);
    const OverlapReport report = compute_overlap_metrics(subset, data.t_c);
    std::printf("W_S %zu\nT_W %zu\nT_C %zu\nT_M %zu\nweighted_overlap %s\n", report.w_s,
                report.t_w_size, report.t_c_size, report.t_m,
                format_double(report.weighted_overlap).c_str());
    return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& ckpt_out) {
    const ExperimentSpec spec = load_spec(opts);
    const Vocab vocab = load_vocab(opts.vocab_path);
    if (spec.corpus_path.empty()) throw DataError("config has no corpus path");
    const Corpus corpus = ingest_paragraphs(spec.corpus_path, vocab);
    const ResolvedData data = resolve_dataset(spec, vocab);
    const CorpusSubset subset = build_subset(spec, corpus, data.t_c);
    const VocabMap vmap = make_vocab_map(spec, subset, data.t_c, vocab);

    ModelConfig cfg = spec.model;
    cfg.vocab_size = vmap.sub_size();
    cfg.num_labels = static_cast<size_t>(data.dataset.n_labels);
    cfg.validate();

    const PretrainResult<float> result = pretrain<float>(corpus, subset, cfg, spec.pretrain_cfg, vocab, vmap);
    save_checkpoint(result.model, result.meta, ckpt_out);
    for (size_t e = 0; e < result.epoch_loss.size(); ++e)
        std::printf("epoch %zu loss %.6f\n", e + 1, result.epoch_loss[e]);
    std::printf("checkpoint %s\nsubset_manifest_hash %s\n", ckpt_out.c_str(),
                result.meta.subset_hash.c_str());
    return 0;
}

int cmd_finetune(const CommonOpts& opts, const std::string& encoder_path,
                 const std::string& ckpt_out) {
    const ExperimentSpec spec = load_spec(opts);
    const Vocab vocab = load_vocab(opts.vocab_path);
    const ResolvedData data = resolve_dataset(spec, vocab);

    VocabMap vmap = VocabMap::identity(vocab);
    LoadedCheckpoint<float> encoder;
    const bool has_encoder = !encoder_path.empty();
    if (has_encoder) {
        encoder = load_checkpoint<float>(encoder_path);
        if (!encoder.meta.sub_vocab.empty())
            vmap = VocabMap::from_sub_vocab(encoder.meta.sub_vocab, vocab);
    } else if (spec.reduced_vocab) {
        if (spec.corpus_path.empty())
            throw DataError("reduced_vocab without an encoder checkpoint needs a corpus");
        const Corpus corpus = ingest_paragraphs(spec.corpus_path, vocab);
        const CorpusSubset subset = build_subset(spec, corpus, data.t_c);
        vmap = make_vocab_map(spec, subset, data.t_c, vocab);
    }

    ModelConfig cfg = spec.model;
    cfg.vocab_size = vmap.sub_size();
    cfg.num_labels = static_cast<size_t>(data.dataset.n_labels);
    cfg.validate();

    const TrainConfig& tc = has_encoder ? spec.finetune_cfg : spec.scratch_cfg;
    const FinetuneResult<float> result =
        finetune<float>(data.dataset, cfg, tc, vocab, vmap, has_encoder ? &encoder : nullptr);

    TrainMeta meta;
    meta.epochs = result.epochs_run;
    meta.eta = tc.eta;
    meta.alpha = tc.alpha;
    meta.seed = tc.seed;
    meta.subset_hash = has_encoder ? encoder.meta.subset_hash : "";
    if (vmap.sub_size() != vocab.size()) meta.sub_vocab = vmap.sub_to_full;
    save_checkpoint(result.model, meta, ckpt_out);

    std::printf("best_accuracy %.4f\nbest_epoch %llu\nepochs_run %llu\ncheckpoint %s\n",
                result.best_accuracy, static_cast<unsigned long long>(result.best_epoch),
                static_cast<unsigned long long>(result.epochs_run), ckpt_out.c_str());
    return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& model_path) {
    const ExperimentSpec spec = load_spec(opts);
    const Vocab vocab = load_vocab(opts.vocab_path);
    const ResolvedData data = resolve_dataset(spec, vocab);

    const LoadedCheckpoint<float> ck = load_checkpoint<float>(model_path);
    VocabMap vmap = ck.meta.sub_vocab.empty() ? VocabMap::identity(vocab)
                                              : VocabMap::from_sub_vocab(ck.meta.sub_vocab, vocab);
    Model<float> model = model_from_checkpoint(ck);
    const EvalResult res = evaluate(model, data.dataset.test, vocab, vmap, spec.finetune_cfg.batch_size);
    std::printf("accuracy %.4f\n", res.accuracy);
    for (size_t l = 0; l < res.per_label_accuracy.size(); ++l)
        std::printf("label %zu accuracy %.4f (%zu instances)\n", l, res.per_label_accuracy[l],
                    res.per_label_total[l]);
    return 0;
}

int cmd_gap(const CommonOpts& opts, const std::string& format, const std::string& out_path) {
    const ExperimentSpec spec = load_spec(opts);
    const Vocab vocab = load_vocab(opts.vocab_path);
    GapOutcome<float> outcome = run_gap_experiment<float>(spec, vocab);
    if (opts.deterministic) outcome.report.wall_seconds = 0.0;
    emit_output(emit_report({outcome.report}, parse_format(format)), out_path);
    return 0;
}

int cmd_committee(const CommonOpts& opts, const std::string& manifest_path,
                  const std::string& format, const std::string& out_path) {
    const Vocab vocab = load_vocab(opts.vocab_path);
    if (manifest_path.empty()) {
        CommitteeExperimentSpec spec = parse_committee_spec(KvDoc::load(opts.config_path));
        resolve_spec_paths(spec.base);
        if (opts.seed >= 0) {
            spec.base.pretrain_cfg.seed = static_cast<uint64_t>(opts.seed);
            spec.base.finetune_cfg.seed = static_cast<uint64_t>(opts.seed);
        }
        CommitteeReport report = run_committee_experiment<float>(spec, vocab);
        if (opts.deterministic) report.wall_seconds = 0.0;
        emit_output(emit_committee_report(report, parse_format(format)), out_path);
        return 0;
    }

    // Manifest mode: evaluate an existing checkpoint list on the config's
    // test split.
    const ExperimentSpec spec = load_spec(opts);
    const ResolvedData data = resolve_dataset(spec, vocab);
    const CommitteeManifest manifest = load_committee_manifest(manifest_path);
    if (static_cast<size_t>(data.dataset.n_labels) != manifest.num_labels)
        throw DataError("dataset has " + std::to_string(data.dataset.n_labels) +
                        " labels, committee manifest expects " + std::to_string(manifest.num_labels));
    std::vector<Model<float>> members;
    std::vector<VocabMap> vmaps;
    for (const std::string& p : manifest.checkpoint_paths) {
        const LoadedCheckpoint<float> ck = load_checkpoint<float>(resolve(p));
        if (ck.config.num_labels != manifest.num_labels)
            throw DataError("committee member " + p + " has num_labels " +
                            std::to_string(ck.config.num_labels) + ", manifest expects " +
                            std::to_string(manifest.num_labels));
        vmaps.push_back(ck.meta.sub_vocab.empty() ? VocabMap::identity(vocab)
                                                  : VocabMap::from_sub_vocab(ck.meta.sub_vocab, vocab));
        members.push_back(model_from_checkpoint(ck));
    }
    const CommitteeEval vote =
        committee_evaluate(members, vmaps, data.dataset.test, vocab, spec.finetune_cfg.batch_size);
    std::printf("committee_accuracy %.4f\n", vote.accuracy);
    for (size_t k = 0; k < vote.member_accuracy.size(); ++k)
        std::printf("member %zu accuracy %.4f\n", k, vote.member_accuracy[k]);
    return 0;
}

int cmd_latency(const CommonOpts& opts) {
    const ExperimentSpec spec = load_experiment_spec(opts.config_path);
    ModelConfig cfg = spec.model;
    std::printf("latency %zu\n", latency(cfg));
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& to_format,
               const std::string& out_path) {
    std::ifstream f(in_path, std::ios::binary);
    if (!f) throw DataError("cannot open report file: " + in_path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string text = ss.str();

    // Detect the stored format from the first table-looking line.
    bool markdown = false;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        const size_t a = line.find_first_not_of(" \t");
        if (a == std::string::npos || line[a] == '#') continue;
        markdown = line[a] == '|';
        break;
    }
    const Table t = markdown ? parse_markdown(text) : parse_csv(text);
    emit_output(parse_format(to_format) == ReportFormat::csv ? to_csv(t) : to_markdown(t), out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tiny language model pre-training and classification workbench"};
    app.require_subcommand(1);

    CommonOpts opts;

    auto* synth = app.add_subcommand("synth-gen", "generate the synthetic topic benchmark");
    SynthConfig synth_cfg;
    std::string synth_corpus, synth_train, synth_test;
    synth->add_option("--corpus-out", synth_corpus, "corpus output path")->required();
    synth->add_option("--train-out", synth_train, "train split output path")->required();
    synth->add_option("--test-out", synth_test, "test split output path")->required();
    synth->add_option("--paragraphs", synth_cfg.corpus_paragraphs, "corpus paragraph count");
    synth->add_option("--topics", synth_cfg.topics, "number of latent topics / labels");
    synth->add_option("--vocab-words", synth_cfg.vocab_words, "generator vocabulary size");
    synth->add_option("--background-words", synth_cfg.background_words,
                      "corpus-only background words");
    synth->add_option("--train-per-label", synth_cfg.train_per_label, "train instances per label");
    synth->add_option("--test-per-label", synth_cfg.test_per_label, "test instances per label");
    synth->add_option("--min-words", synth_cfg.min_words, "minimum paragraph length");
    synth->add_option("--max-words", synth_cfg.max_words, "maximum paragraph length");
    uint64_t synth_seed = 7;
    synth->add_option("--gen-seed", synth_seed, "generator seed");
    add_common(synth, opts, false);

    auto* build = app.add_subcommand("build-subset", "build a corpus subset and write its manifest");
    std::string manifest_out;
    build->add_option("--manifest-out", manifest_out, "manifest output path")->required();
    add_common(build, opts);

    auto* overlap = app.add_subcommand("overlap", "token overlap between a subset and the task");
    std::string overlap_manifest;
    overlap->add_option("--manifest", overlap_manifest, "reuse a stored subset manifest");
    add_common(overlap, opts);

    auto* pre = app.add_subcommand("pretrain", "masked-language-model pre-training on a subset");
    std::string pre_out;
    pre->add_option("--out", pre_out, "checkpoint output path")->required();
    add_common(pre, opts);

    auto* fine = app.add_subcommand("finetune", "fine-tune a classifier (optionally from an encoder)");
    std::string fine_encoder, fine_out;
    fine->add_option("--encoder", fine_encoder, "pre-trained encoder checkpoint");
    fine->add_option("--out", fine_out, "checkpoint output path")->required();
    add_common(fine, opts);

    auto* eval = app.add_subcommand("evaluate", "evaluate a classifier checkpoint on the test split");
    std::string eval_model;
    eval->add_option("--model", eval_model, "classifier checkpoint")->required();
    add_common(eval, opts);

    auto* gap = app.add_subcommand("gap", "pre-trained vs from-scratch accuracy gap experiment");
    std::string gap_format = "markdown", gap_out;
    gap->add_option("--format", gap_format, "csv or markdown");
    gap->add_option("--out", gap_out, "write the report here instead of stdout");
    add_common(gap, opts);

    auto* com = app.add_subcommand("committee", "soft-committee experiment or checkpoint vote");
    std::string com_manifest, com_format = "markdown", com_out;
    com->add_option("--manifest", com_manifest, "checkpoint list manifest (evaluation mode)");
    com->add_option("--format", com_format, "csv or markdown");
    com->add_option("--out", com_out, "write the report here instead of stdout");
    add_common(com, opts);

    auto* lat = app.add_subcommand("latency", "layer-count latency of the configured model");
    add_common(lat, opts);

    auto* rep = app.add_subcommand("report", "convert a stored report between csv and markdown");
    std::string rep_in, rep_to = "markdown", rep_out;
    rep->add_option("--in", rep_in, "stored report file")->required();
    rep->add_option("--to", rep_to, "target format: csv or markdown");
    rep->add_option("--out", rep_out, "write here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed()) {
            synth_cfg.seed = synth_seed;
            return cmd_synth_gen(synth_corpus, synth_train, synth_test, synth_cfg, opts);
        }
        if (build->parsed()) return cmd_build_subset(opts, manifest_out);
        if (overlap->parsed()) return cmd_overlap(opts, overlap_manifest);
        if (pre->parsed()) return cmd_pretrain(opts, pre_out);
        if (fine->parsed()) return cmd_finetune(opts, fine_encoder, fine_out);
        if (eval->parsed()) return cmd_evaluate(opts, eval_model);
        if (gap->parsed()) return cmd_gap(opts, gap_format, gap_out);
        if (com->parsed()) return cmd_committee(opts, com_manifest, com_format, com_out);
        if (lat->parsed()) return cmd_latency(opts);
        if (rep->parsed()) return cmd_report(rep_in, rep_to, rep_out);
        std::fprintf(stderr, "error: no subcommand selected\n");
        return 1;
    } catch (const tlm::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const tlm::NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

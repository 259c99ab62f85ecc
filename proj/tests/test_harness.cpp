#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tlm/harness.hpp"

using namespace tlm;

namespace {

std::string source_dir() {
    const char* env = std::getenv("TLM_SOURCE_DIR");
    return env && *env ? env : ".";
}

const Vocab& vocab() {
    static Vocab v = Vocab::load(source_dir() + "/data/vocab/wordpiece_30522.txt");
    return v;
}

}  // namespace

TEST_CASE("key-value documents parse comments, blanks and CRLF") {
    const KvDoc doc = KvDoc::parse(
        "# leading comment\n"
        "alpha 1\r\n"
        "\n"
        "  beta  two words  # trailing comment\n"
        "gamma 0.5\n"
        "flag true\n");
    REQUIRE(doc.has("alpha"));
    REQUIRE_FALSE(doc.has("delta"));
    REQUIRE(doc.get_u64("alpha", 9) == 1);
    REQUIRE(doc.get("beta", "") == "two words");
    REQUIRE(doc.get_double("gamma", 0.0) == 0.5);
    REQUIRE(doc.get_bool("flag", false));
    REQUIRE(doc.get_bool("absent", true));
    REQUIRE(doc.get_u64("absent", 7) == 7);
    REQUIRE(doc.require("alpha") == "1");
    REQUIRE(doc.keys() == std::vector<std::string>{"alpha", "beta", "gamma", "flag"});

    REQUIRE_THROWS_AS(doc.require("delta"), DataError);
    REQUIRE_THROWS_AS(KvDoc::parse("a 1\na 2\n"), DataError);   // duplicate key
    REQUIRE_THROWS_AS(KvDoc::parse("lonely\n"), DataError);     // no value
    REQUIRE_THROWS_AS(KvDoc::parse("flag maybe\n").get_bool("flag", false), DataError);
    REQUIRE_THROWS_AS(KvDoc::load("/tmp/tlm_harness_no_such_file.cfg"), DataError);
}

TEST_CASE("experiment specs start from the documented defaults") {
    const ExperimentSpec s = parse_experiment_spec(KvDoc::parse("train a.tsv\ntest b.tsv\n"));
    REQUIRE(s.corpus_path.empty());
    REQUIRE(s.subset_kind == SubsetKind::random);
    REQUIRE(s.subset_size == 0);
    REQUIRE(s.filler_budget == kUnlimitedFiller);
    REQUIRE_FALSE(s.reduced_vocab);
    REQUIRE(s.repetitions == 1);

    REQUIRE(s.model.blocks == 1);
    REQUIRE(s.model.heads == 12);
    REQUIRE(s.model.head_dim == 64);
    REQUIRE(s.model.hidden == 768);
    REQUIRE(s.model.conv_layers.empty());
    REQUIRE(s.model.max_positions == kSeqLen);
    REQUIRE(s.model.dropout == 0.1);

    REQUIRE(s.pretrain_cfg.epochs == 50);
    REQUIRE(s.pretrain_cfg.batch_size == 32);
    REQUIRE(s.pretrain_cfg.eta == 5.5e-5);
    REQUIRE(s.pretrain_cfg.alpha == 1e-2);
    REQUIRE(s.pretrain_cfg.seed == 42);
    REQUIRE(s.pretrain_cfg.patience == 0);

    REQUIRE(s.finetune_cfg.epochs == 50);
    REQUIRE(s.finetune_cfg.eta == 1e-4);
    REQUIRE(s.finetune_cfg.alpha == 1e-2);
    REQUIRE(s.finetune_cfg.patience == 10);

    // the scratch arm inherits the fine-tune settings wholesale
    REQUIRE(s.scratch_cfg.epochs == s.finetune_cfg.epochs);
    REQUIRE(s.scratch_cfg.eta == s.finetune_cfg.eta);
    REQUIRE(s.scratch_cfg.alpha == s.finetune_cfg.alpha);
}

TEST_CASE("experiment specs honor overrides and reject junk") {
    const ExperimentSpec s = parse_experiment_spec(KvDoc::parse(
        "corpus c.txt\ntrain a.tsv\ntest b.tsv\n"
        "subset.kind inflated\nsubset.exclusion_fraction 0.34\nsubset.filler_budget 5000\n"
        "model.blocks 2\nmodel.heads 8\nmodel.head_dim 16\nmodel.conv 64x3x3,32x1x5\n"
        "model.reduced_vocab true\n"
        "finetune.eta 7e-5\nfinetune.alpha 1.5e-2\n"
        "scratch.eta 1e-5\nscratch.alpha 1.1e-2\n"
        "repetitions 5\n"));
    REQUIRE(s.subset_kind == SubsetKind::inflated);
    REQUIRE(s.exclusion_fraction == 0.34);
    REQUIRE(s.filler_budget == 5000);
    REQUIRE(s.model.hidden == 128);
    REQUIRE(s.model.conv_layers.size() == 2);
    REQUIRE(s.model.conv_layers[1].filters == 32);
    REQUIRE(s.model.conv_layers[1].kw == 5);
    REQUIRE(s.reduced_vocab);
    REQUIRE(s.finetune_cfg.eta == 7e-5);
    // scratch starts from the fine-tune arm and then applies its overrides
    REQUIRE(s.scratch_cfg.eta == 1e-5);
    REQUIRE(s.scratch_cfg.alpha == 1.1e-2);
    REQUIRE(s.scratch_cfg.epochs == s.finetune_cfg.epochs);
    REQUIRE(s.repetitions == 5);

    REQUIRE_THROWS_AS(parse_experiment_spec(KvDoc::parse("test b.tsv\n")), DataError);
    REQUIRE_THROWS_AS(
        parse_experiment_spec(KvDoc::parse("train a.tsv\ntest b.tsv\nsubset.kind typo\n")),
        DataError);
    REQUIRE_THROWS_AS(
        parse_experiment_spec(KvDoc::parse("train a.tsv\ntest b.tsv\nrepetitions 0\n")),
        DataError);
}

TEST_CASE("serialized specs re-parse to the same canonical form and hash") {
    const std::string cfg =
        "train a.tsv\ntest b.tsv\nsubset.size 2000\nmodel.heads 2\nmodel.head_dim 4\n"
        "pretrain.epochs 3\nfinetune.seed 9\nrepetitions 2\n";
    const ExperimentSpec s = parse_experiment_spec(KvDoc::parse(cfg));
    const std::string canon = serialize_experiment_spec(s);
    const ExperimentSpec back = parse_experiment_spec(KvDoc::parse(canon));
    REQUIRE(serialize_experiment_spec(back) == canon);
    REQUIRE(experiment_config_hash(back) == experiment_config_hash(s));

    ExperimentSpec tweaked = s;
    tweaked.subset_size = 2001;
    REQUIRE(experiment_config_hash(tweaked) != experiment_config_hash(s));
}

TEST_CASE("csv tables round-trip with quoting") {
    Table t;
    t.header = {"name", "note"};
    t.rows = {{"plain", "x"}, {"comma, inside", "quote \"q\" inside"}, {"", "empty first"}};
    const std::string csv = to_csv(t);
    REQUIRE(parse_csv(csv) == t);

    // comment and blank lines vanish
    REQUIRE(parse_csv("# hi\n\na,b\n1,2\n# mid\n3,4\n").rows ==
            std::vector<std::vector<std::string>>{{"1", "2"}, {"3", "4"}});

    REQUIRE_THROWS_AS(parse_csv("a,b\n1,2,3\n"), DataError);   // ragged row
    REQUIRE_THROWS_AS(parse_csv("a,\"b\n"), DataError);        // open quote
    REQUIRE_THROWS_AS(parse_csv("# only comments\n"), DataError);
}

TEST_CASE("markdown tables round-trip") {
    Table t;
    t.header = {"W_S", "Acc"};
    t.rows = {{"2000", "0.8081"}, {"0", "0.7500"}};
    const std::string md = to_markdown(t);
    REQUIRE(md.find("| --- | --- |") != std::string::npos);
    REQUIRE(parse_markdown(md) == t);

    // prose around the table is ignored, ragged rows are not
    REQUIRE(parse_markdown("intro text\n" + md + "outro\n") == t);
    REQUIRE_THROWS_AS(parse_markdown("| a | b |\n| --- | --- |\n| 1 |\n"), DataError);
    REQUIRE_THROWS_AS(parse_markdown("no table here\n"), DataError);
}

TEST_CASE("arm statistics and the gap table schema") {
    ArmStats a;
    REQUIRE(a.mean() == 0.0);
    REQUIRE(a.sd() == 0.0);
    a.values = {0.5, 0.7};
    REQUIRE(a.mean() == Catch::Approx(0.6).margin(1e-15));
    REQUIRE(a.sd() == Catch::Approx(0.1414213562373095).margin(1e-12));

    ExperimentReport r;
    r.overlap.w_s = 2000;
    r.overlap.t_w_size = 197;
    r.overlap.t_m = 3;
    r.acc_pretrained.values = {0.8062, 0.8100};
    r.acc_scratch.values = {0.7500, 0.7500};
    r.has_pretrained_arm = true;
    REQUIRE(r.acc() == Catch::Approx(0.8081).margin(1e-12));
    REQUIRE(r.gap() == Catch::Approx(0.0581).margin(1e-12));
    REQUIRE_FALSE(r.sd_warning());

    const Table t = gap_table({r});
    REQUIRE(t.header == std::vector<std::string>{"W_S", "T_W", "T_M", "Acc", "Gap"});
    REQUIRE(t.rows == std::vector<std::vector<std::string>>{{"2000", "197", "3", "0.8081", "0.0581"}});

    // without a pre-training arm the headline is the scratch arm and the gap is zero
    ExperimentReport s;
    s.overlap.w_s = 0;
    s.acc_scratch.values = {0.7500};
    REQUIRE(s.acc() == 0.75);
    REQUIRE(s.gap() == 0.0);

    ExperimentReport noisy;
    noisy.acc_scratch.values = {0.50, 0.55};
    REQUIRE(noisy.sd_warning());
}

TEST_CASE("emitted reports parse back to the same table") {
    ExperimentReport r;
    r.overlap.w_s = 2000;
    r.overlap.t_w_size = 197;
    r.overlap.t_c_size = 160;
    r.overlap.t_m = 3;
    r.overlap.weighted_overlap = 0.9795;
    r.acc_pretrained.values = {0.8062};
    r.acc_scratch.values = {0.7031};
    r.has_pretrained_arm = true;
    r.per_label_accuracy = {0.9, 0.7};
    r.model_latency = 7;
    r.config_hash = 0xdeadbeef;
    r.subset_hash = "a6266ebb720b591c";
    r.seeds = {42, 43};

    ExperimentReport zero;
    zero.acc_scratch.values = {0.7500};
    const std::vector<ExperimentReport> reports{r, zero};

    for (ReportFormat fmt : {ReportFormat::csv, ReportFormat::markdown}) {
        const std::string text = emit_report(reports, fmt);
        REQUIRE(text.find("# config_hash 00000000deadbeef") != std::string::npos);
        REQUIRE(text.find("# subset_manifest_hash a6266ebb720b591c") != std::string::npos);
        REQUIRE(text.find("# seeds 42,43") != std::string::npos);
        REQUIRE(text.find("# latency 7") != std::string::npos);
        const Table parsed = fmt == ReportFormat::csv ? parse_csv(text) : parse_markdown(text);
        REQUIRE(parsed == gap_table(reports));
    }

    // numeric cells survive the trip losslessly at the printed precision
    const Table parsed = parse_csv(emit_report(reports, ReportFormat::csv));
    REQUIRE(std::stoul(parsed.rows[0][0]) == r.overlap.w_s);
    REQUIRE(std::stoul(parsed.rows[0][1]) == r.overlap.t_w_size);
    REQUIRE(std::stoul(parsed.rows[0][2]) == r.overlap.t_m);
    REQUIRE(parsed.rows[0][3] == format_acc(r.acc()));
    REQUIRE(parsed.rows[0][4] == format_acc(r.gap()));
}

TEST_CASE("committee tables describe each member architecture") {
    CommitteeReport r;
    ModelConfig with_conv;
    with_conv.blocks = 1;
    with_conv.heads = 8;
    with_conv.head_dim = 8;
    with_conv.hidden = 64;
    with_conv.conv_layers = {{64, 3, 3}, {64, 3, 3}};
    ModelConfig plain;
    plain.blocks = 1;
    plain.heads = 24;
    plain.head_dim = 4;
    plain.hidden = 96;
    r.members = {{with_conv, 0.846}, {plain, 0.841}};
    r.committee_accuracy = 0.868;

    const Table t = committee_table(r);
    REQUIRE(t.header ==
            std::vector<std::string>{"BERT blocks", "CLs", "d", "kernel", "heads", "Acc"});
    REQUIRE(t.rows[0] == std::vector<std::string>{"1", "2", "64", "3x3", "8", "0.8460"});
    REQUIRE(t.rows[1] == std::vector<std::string>{"1", "0", "-", "-", "24", "0.8410"});

    const std::string text = emit_committee_report(r, ReportFormat::markdown);
    REQUIRE(text.find("# committee_accuracy 0.8680") != std::string::npos);
    REQUIRE(parse_markdown(text) == t);
}

TEST_CASE("synthetic generation is deterministic and balanced") {
    SynthConfig cfg;
    cfg.vocab_words = 32;
    cfg.topics = 3;
    cfg.background_words = 8;
    cfg.corpus_paragraphs = 40;
    cfg.train_per_label = 5;
    cfg.test_per_label = 7;
    cfg.seed = 11;

    const SynthData a = generate_synthetic(cfg, vocab());
    const SynthData b = generate_synthetic(cfg, vocab());
    REQUIRE(a.words == b.words);
    REQUIRE(a.corpus_lines == b.corpus_lines);
    REQUIRE(a.dataset.train.size() == 15);
    REQUIRE(a.dataset.test.size() == 21);
    REQUIRE(a.dataset.n_labels == 3);
    for (size_t i = 0; i < a.dataset.train.size(); ++i) {
        REQUIRE(a.dataset.train[i].text == b.dataset.train[i].text);
        REQUIRE(a.dataset.train[i].label == b.dataset.train[i].label);
    }

    std::map<int32_t, size_t> train_counts, test_counts;
    for (const Instance& ins : a.dataset.train) ++train_counts[ins.label];
    for (const Instance& ins : a.dataset.test) ++test_counts[ins.label];
    for (int32_t l = 0; l < 3; ++l) {
        REQUIRE(train_counts[l] == 5);
        REQUIRE(test_counts[l] == 7);
    }

    // generator words tokenize to themselves, so word structure survives
    REQUIRE(a.words.size() == 32);
    for (const std::string& w : a.words) {
        const std::vector<int32_t> ids = tokenize_ids(w, vocab());
        REQUIRE(ids.size() == 1);
        REQUIRE(vocab().token(ids[0]) == w);
    }

    // background words never leak into labeled instances
    std::set<std::string> background(a.words.end() - 8, a.words.end());
    const auto check_clean = [&](const std::vector<Instance>& split) {
        for (const Instance& ins : split) {
            std::istringstream ss(ins.text);
            std::string w;
            while (ss >> w) REQUIRE(background.count(w) == 0);
        }
    };
    check_clean(a.dataset.train);
    check_clean(a.dataset.test);

    cfg.seed = 12;
    const SynthData c = generate_synthetic(cfg, vocab());
    REQUIRE(a.corpus_lines != c.corpus_lines);

    SynthConfig bad = cfg;
    bad.topics = 1;
    REQUIRE_THROWS_AS(generate_synthetic(bad, vocab()), std::invalid_argument);
    bad = cfg;
    bad.background_words = 32;
    REQUIRE_THROWS_AS(generate_synthetic(bad, vocab()), std::invalid_argument);
    bad = cfg;
    bad.topics = 5;  // 24 task words do not divide into 5 blocks
    REQUIRE_THROWS_AS(generate_synthetic(bad, vocab()), std::invalid_argument);
    bad = cfg;
    bad.ring = 0.9;  // probabilities exceed 1
    REQUIRE_THROWS_AS(generate_synthetic(bad, vocab()), std::invalid_argument);
}

namespace {

/// Tiny on-disk benchmark shared by the end-to-end harness tests.
struct HarnessFixture {
    std::string corpus_path = "/tmp/tlm_harness_test_corpus.txt";
    std::string train_path = "/tmp/tlm_harness_test_train.tsv";
    std::string test_path = "/tmp/tlm_harness_test_test.tsv";

    HarnessFixture() {
        SynthConfig cfg;
        cfg.vocab_words = 24;
        cfg.topics = 2;
        cfg.background_words = 4;
        cfg.corpus_paragraphs = 16;
        cfg.train_per_label = 4;
        cfg.test_per_label = 3;
        cfg.min_words = 4;
        cfg.max_words = 8;
        cfg.seed = 5;
        const SynthData d = generate_synthetic(cfg, vocab());
        write_lines(corpus_path, d.corpus_lines);
        write_instances(train_path, d.dataset.train);
        write_instances(test_path, d.dataset.test);
    }

    std::string spec_text(size_t subset_size, size_t repetitions) const {
        std::string s;
        s += "corpus " + corpus_path + "\ntrain " + train_path + "\ntest " + test_path + "\n";
        s += "subset.kind random\nsubset.size " + std::to_string(subset_size) + "\nsubset.seed 3\n";
        s += "model.blocks 1\nmodel.heads 2\nmodel.head_dim 4\nmodel.ffn_mult 2\n";
        s += "model.max_positions 12\nmodel.dropout 0.0\nmodel.reduced_vocab true\n";
        s += "pretrain.epochs 2\npretrain.batch 4\npretrain.eta 1e-3\npretrain.seed 42\n";
        s += "finetune.epochs 2\nfinetune.batch 4\nfinetune.eta 1e-3\nfinetune.seed 42\n";
        s += "finetune.patience 0\nscratch.eta 2e-3\n";
        s += "repetitions " + std::to_string(repetitions) + "\n";
        return s;
    }
};

}  // namespace

TEST_CASE("dataset resolution and vocabulary maps cover task tokens") {
    HarnessFixture fx;
    ExperimentSpec spec = parse_experiment_spec(KvDoc::parse(fx.spec_text(8, 1)));

    const ResolvedData data = resolve_dataset(spec, vocab());
    REQUIRE(data.dataset.n_labels == 2);
    REQUIRE(data.dataset.train.size() == 8);
    REQUIRE(data.dataset.test.size() == 6);
    REQUIRE_FALSE(data.t_c.ids.empty());

    const Corpus corpus = ingest_paragraphs(fx.corpus_path, vocab());
    const CorpusSubset subset = build_subset(spec, corpus, data.t_c);
    REQUIRE(subset.indices.size() == 8);

    // reduced vocabulary = specials + T_W + task tokens outside T_W
    const VocabMap vmap = make_vocab_map(spec, subset, data.t_c, vocab());
    for (int32_t id : subset.t_w.ids) REQUIRE(vmap.to_sub(id) >= 0);
    for (int32_t id : data.t_c.ids) REQUIRE(vmap.to_sub(id) != vmap.unk_sub);
    size_t outside = 0;
    for (int32_t id : data.t_c.ids)
        if (!subset.t_w.contains(id)) ++outside;
    REQUIRE(vmap.sub_size() == 5 + subset.t_w.ids.size() + outside);

    spec.reduced_vocab = false;
    REQUIRE(make_vocab_map(spec, subset, data.t_c, vocab()).sub_size() == vocab().size());
}

TEST_CASE("gap experiments with a pre-training arm fill every report field") {
    HarnessFixture fx;
    const ExperimentSpec spec = parse_experiment_spec(KvDoc::parse(fx.spec_text(8, 2)));
    const GapOutcome<float> out = run_gap_experiment<float>(spec, vocab());
    const ExperimentReport& r = out.report;

    REQUIRE(r.has_pretrained_arm);
    REQUIRE(r.overlap.w_s == 8);
    REQUIRE(r.acc_pretrained.values.size() == 2);
    REQUIRE(r.acc_scratch.values.size() == 2);
    REQUIRE(r.seeds == std::vector<uint64_t>{42, 43});
    REQUIRE_FALSE(r.subset_hash.empty());
    REQUIRE(r.config_hash == experiment_config_hash(spec));
    REQUIRE(r.model_latency == latency(out.pretrained_models.empty()
                                           ? ModelConfig(spec.model)
                                           : out.pretrained_models.front().config()));
    REQUIRE(r.per_label_accuracy.size() == 2);
    for (double v : r.acc_pretrained.values) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    REQUIRE(r.wall_seconds > 0.0);

    // identical spec, identical report, apart from the wall clock
    GapOutcome<float> again = run_gap_experiment<float>(spec, vocab());
    ExperimentReport a = r, b = again.report;
    a.wall_seconds = b.wall_seconds = 0.0;
    REQUIRE(emit_report({a}, ReportFormat::csv) == emit_report({b}, ReportFormat::csv));

    // keep_models returns one fine-tuned model and meta per repetition
    const GapOutcome<float> kept = run_gap_experiment<float>(spec, vocab(), true);
    REQUIRE(kept.pretrained_models.size() == 2);
    REQUIRE(kept.pretrain_meta.size() == 2);
    REQUIRE(kept.pretrain_meta[0].seed == 42);
    REQUIRE(kept.pretrain_meta[1].seed == 43);
}

TEST_CASE("subset size zero drops the pre-training arm") {
    HarnessFixture fx;
    const ExperimentSpec spec = parse_experiment_spec(KvDoc::parse(fx.spec_text(0, 1)));
    const GapOutcome<float> out = run_gap_experiment<float>(spec, vocab());
    REQUIRE_FALSE(out.report.has_pretrained_arm);
    REQUIRE(out.report.acc_pretrained.values.empty());
    REQUIRE(out.report.acc_scratch.values.size() == 1);
    REQUIRE(out.report.gap() == 0.0);
    REQUIRE(out.report.acc() == out.report.acc_scratch.mean());
    REQUIRE(out.report.subset_hash.empty());
    REQUIRE(out.report.overlap.w_s == 0);
    REQUIRE(out.report.overlap.t_m == out.report.overlap.t_c_size);
}

TEST_CASE("committee specs declare members that inherit the base model") {
    HarnessFixture fx;
    std::string cfg = fx.spec_text(8, 1);
    cfg += "committee.pretrain false\n";
    cfg += "member.0.heads 2\nmember.0.head_dim 4\nmember.0.conv 4x3x3\n";
    cfg += "member.1.blocks 1\nmember.1.heads 1\nmember.1.head_dim 8\n";
    const CommitteeExperimentSpec spec = parse_committee_spec(KvDoc::parse(cfg));
    REQUIRE_FALSE(spec.pretrain_members);
    REQUIRE(spec.member_models.size() == 2);
    REQUIRE(spec.member_models[0].hidden == 8);
    REQUIRE(spec.member_models[0].conv_layers.size() == 1);
    REQUIRE(spec.member_models[1].heads == 1);
    REQUIRE(spec.member_models[1].hidden == 8);
    REQUIRE(spec.member_models[1].conv_layers.empty());   // inherited "none"
    REQUIRE(spec.member_models[1].ffn_mult == 2);         // inherited from base

    REQUIRE_THROWS_AS(parse_committee_spec(KvDoc::parse(fx.spec_text(8, 1))), DataError);
}

TEST_CASE("committee experiments train every member and vote") {
    HarnessFixture fx;
    std::string cfg = fx.spec_text(8, 1);
    cfg += "committee.pretrain true\n";
    cfg += "member.0.heads 2\nmember.0.head_dim 4\n";
    cfg += "member.1.heads 1\nmember.1.head_dim 8\n";
    const CommitteeExperimentSpec spec = parse_committee_spec(KvDoc::parse(cfg));
    const CommitteeReport r = run_committee_experiment<float>(spec, vocab());
    REQUIRE(r.members.size() == 2);
    REQUIRE(r.seeds == std::vector<uint64_t>{42, 43});
    REQUIRE(r.committee_accuracy >= 0.0);
    REQUIRE(r.committee_accuracy <= 1.0);
    for (const CommitteeMemberReport& m : r.members) {
        REQUIRE(m.accuracy >= 0.0);
        REQUIRE(m.accuracy <= 1.0);
    }
    REQUIRE(r.config_hash == experiment_config_hash(spec.base));

    // pre-training without a corpus is refused
    CommitteeExperimentSpec no_corpus = spec;
    no_corpus.base.corpus_path.clear();
    REQUIRE_THROWS_AS(run_committee_experiment<float>(no_corpus, vocab()), DataError);
}

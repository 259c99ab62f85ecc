#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "tlm/train.hpp"

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

// Plain lowercase words straight out of the vocabulary tokenize back to
// themselves, which keeps the test corpora fully in-vocabulary.
std::vector<std::string> vocab_words(size_t n) {
    const Vocab& v = vocab();
    std::vector<std::string> words;
    for (size_t id = 0; id < v.size() && words.size() < n; ++id) {
        const std::string& t = v.token(static_cast<int32_t>(id));
        if (t.size() < 3 || t.size() > 8) continue;
        bool alpha = true;
        for (char c : t) alpha &= c >= 'a' && c <= 'z';
        if (alpha) words.push_back(t);
    }
    REQUIRE(words.size() == n);
    return words;
}

ModelConfig tiny_config(size_t vocab_size, size_t num_labels = 2) {
    ModelConfig cfg;
    cfg.blocks = 1;
    cfg.heads = 2;
    cfg.head_dim = 4;
    cfg.hidden = 8;
    cfg.ffn_mult = 2;
    cfg.vocab_size = vocab_size;
    cfg.max_positions = 16;
    cfg.num_labels = num_labels;
    cfg.dropout = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("learning rate decays linearly and freezes at the 50-epoch mark") {
    const LrSchedule full = make_lr_schedule(1.0, 50, 10);
    REQUIRE(full.at(0) == 1.0);
    REQUIRE(full.at(250) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(full.at(500) == 0.0);
    REQUIRE(full.at(600) == 0.0);

    const LrSchedule frozen = make_lr_schedule(2e-4, 100, 10);
    REQUIRE(frozen.at(0) == 2e-4);
    REQUIRE(frozen.at(250) == Catch::Approx(1.5e-4).margin(1e-18));
    REQUIRE(frozen.at(500) == Catch::Approx(1e-4).margin(1e-18));
    REQUIRE(frozen.at(750) == Catch::Approx(1e-4).margin(1e-18));  // frozen from here on
    REQUIRE(frozen.at(1000) == Catch::Approx(1e-4).margin(1e-18));

    // short runs hit zero before the freeze point and stay there
    const LrSchedule brief = make_lr_schedule(1.0, 25, 4);
    REQUIRE(brief.at(100) == 0.0);
    REQUIRE(brief.at(150) == 0.0);

    REQUIRE_THROWS_AS(make_lr_schedule(1.0, 0, 10), std::invalid_argument);
}

TEST_CASE("masking hits the 15% rate and the 80/10/10 split") {
    const size_t bsz = 800, seq = 128;
    Batch b;
    b.bsz = bsz;
    b.seq = seq;
    Rng id_rng(101);
    for (size_t i = 0; i < bsz * seq; ++i) {
        b.ids.push_back(static_cast<int32_t>(104 + id_rng.next_below(30522 - 104)));
        b.mask.push_back(1);
    }
    const std::array<int32_t, 5> specials{0, 100, 101, 102, 103};

    Rng rng(4242);
    const MaskedBatch mb = mask_batch(b, specials, 103, 30522, rng);

    const size_t candidates = bsz * seq;
    REQUIRE(candidates >= 100000);
    const double sel_rate = static_cast<double>(mb.n_selected) / static_cast<double>(candidates);
    REQUIRE(std::abs(sel_rate - 0.15) <= 0.005);

    size_t to_mask = 0, to_random = 0, kept = 0;
    for (size_t i = 0; i < candidates; ++i) {
        if (mb.labels[i] == ops::kIgnoreLabel) {
            REQUIRE(mb.batch.ids[i] == b.ids[i]);  // untouched
            continue;
        }
        REQUIRE(mb.labels[i] == b.ids[i]);  // label holds the original id
        const int32_t now = mb.batch.ids[i];
        if (now == 103)
            ++to_mask;
        else if (now == b.ids[i])
            ++kept;
        else {
            ++to_random;
            for (int32_t s : specials) REQUIRE(now != s);
            REQUIRE(now >= 0);
            REQUIRE(now < 30522);
        }
    }
    const double n_sel = static_cast<double>(mb.n_selected);
    REQUIRE(std::abs(static_cast<double>(to_mask) / n_sel - 0.80) <= 0.015);
    REQUIRE(std::abs(static_cast<double>(to_random) / n_sel - 0.10) <= 0.015);
    REQUIRE(std::abs(static_cast<double>(kept) / n_sel - 0.10) <= 0.015);
}

TEST_CASE("masking never selects special tokens or padding") {
    Batch b;
    b.bsz = 64;
    b.seq = 8;
    const std::array<int32_t, 5> specials{0, 100, 101, 102, 103};
    for (size_t r = 0; r < 64; ++r) {
        // [CLS] w w w [SEP] [PAD] [PAD] [PAD]
        const int32_t word = static_cast<int32_t>(200 + r);
        for (int32_t id : {101, word, word, word, 102, 0, 0, 0}) b.ids.push_back(id);
        for (uint8_t m : {1, 1, 1, 1, 1, 0, 0, 0}) b.mask.push_back(m);
    }
    Rng rng(7);
    const MaskedBatch mb = mask_batch(b, specials, 103, 30522, rng);
    for (size_t i = 0; i < b.ids.size(); ++i) {
        const size_t col = i % 8;
        if (col == 0 || col >= 4) {
            REQUIRE(mb.labels[i] == ops::kIgnoreLabel);
            REQUIRE(mb.batch.ids[i] == b.ids[i]);
        }
    }
    REQUIRE(mb.n_selected > 0);

    // same seed, same corruption
    Rng rng2(7);
    const MaskedBatch mb2 = mask_batch(b, specials, 103, 30522, rng2);
    REQUIRE(mb2.batch.ids == mb.batch.ids);
    REQUIRE(mb2.labels == mb.labels);
}

TEST_CASE("masking respects a reduced vocabulary") {
    Batch b;
    b.bsz = 200;
    b.seq = 10;
    Rng id_rng(3);
    for (size_t i = 0; i < 2000; ++i) {
        b.ids.push_back(static_cast<int32_t>(5 + id_rng.next_below(5)));  // sub ids 5..9
        b.mask.push_back(1);
    }
    const std::array<int32_t, 5> specials{0, 1, 2, 3, 4};
    Rng rng(9);
    const MaskedBatch mb = mask_batch(b, specials, 4, 10, rng);
    REQUIRE(mb.n_selected > 0);
    for (size_t i = 0; i < b.ids.size(); ++i) {
        REQUIRE(mb.batch.ids[i] >= 0);
        REQUIRE(mb.batch.ids[i] < 10);
        if (mb.labels[i] != ops::kIgnoreLabel && mb.batch.ids[i] != 4)
            REQUIRE(mb.batch.ids[i] >= 5);  // random draws avoid sub-space specials
    }
}

TEST_CASE("adamw matches an independent reference implementation") {
    const ModelConfig cfg = tiny_config(8);
    Model<double> model(cfg, 77);

    // independent copy stepped by reference formulas
    std::vector<Tensor<double>> ref_w, ref_m, ref_v;
    for (const auto& p : model.params()) {
        ref_w.push_back(p.tensor);
        ref_m.emplace_back(p.tensor.shape, 0.0);
        ref_v.emplace_back(p.tensor.shape, 0.0);
    }

    AdamWState<double> st = AdamWState<double>::init(model);
    const double eta = 1e-2, alpha = 0.05;

    Rng grad_rng(15);
    for (int step = 1; step <= 3; ++step) {
        Graph<double> g;
        ForwardPass<double> fp(model, g);
        // drive the optimizer with synthetic gradients planted on the tape
        std::vector<Tensor<double>> grads;
        for (size_t i = 0; i < model.params().size(); ++i) {
            Tensor<double>& gr = g.grad_ref(fp.param_var(i).index());
            for (double& v : gr.data) v = 2.0 * grad_rng.next_double() - 1.0;
            grads.push_back(gr);
        }
        adamw_step(model, fp, st, eta, alpha);

        const double bc1 = 1.0 - std::pow(0.9, step);
        const double bc2 = 1.0 - std::pow(0.999, step);
        for (size_t i = 0; i < ref_w.size(); ++i) {
            const bool decay = model.params()[i].decay;
            for (size_t j = 0; j < ref_w[i].size(); ++j) {
                const double gj = grads[i].data[j];
                ref_m[i].data[j] = 0.9 * ref_m[i].data[j] + 0.1 * gj;
                ref_v[i].data[j] = 0.999 * ref_v[i].data[j] + 0.001 * gj * gj;
                const double m_hat = ref_m[i].data[j] / bc1;
                const double v_hat = ref_v[i].data[j] / bc2;
                double w = ref_w[i].data[j];
                double upd = eta * m_hat / (std::sqrt(v_hat) + 1e-8);
                if (decay) upd += eta * alpha * w;
                ref_w[i].data[j] = w - upd;
            }
        }
        for (size_t i = 0; i < ref_w.size(); ++i)
            for (size_t j = 0; j < ref_w[i].size(); ++j)
                REQUIRE(model.params()[i].tensor.data[j] ==
                        Catch::Approx(ref_w[i].data[j]).margin(1e-13));
    }
    REQUIRE(st.t == 3);
}

TEST_CASE("adamw hand-checked first step and zero-decay purity") {
    const ModelConfig cfg = tiny_config(8);
    Model<double> model(cfg, 3);
    const size_t wi = model.param_index("block.0.attn.wq");  // decayed weight
    const size_t bi = model.param_index("block.0.attn.bq");  // plain bias
    const double w0 = model.params()[wi].tensor.data[0];

    AdamWState<double> st = AdamWState<double>::init(model);
    Graph<double> g;
    ForwardPass<double> fp(model, g);
    g.grad_ref(fp.param_var(wi).index()).data[0] = 2.0;
    g.grad_ref(fp.param_var(bi).index()).data[0] = 2.0;
    adamw_step(model, fp, st, 0.1, 0.01);

    // first step: m=0.2, v=0.004, bias corrections 0.1 and 0.001, so the
    // Adam term is 0.1 * 2 / (2 + 1e-8)
    const double adam_term = 0.1 * 2.0 / (2.0 + 1e-8);
    REQUIRE(model.params()[wi].tensor.data[0] ==
            Catch::Approx(w0 - adam_term - 0.1 * 0.01 * w0).margin(1e-15));
    REQUIRE(model.params()[bi].tensor.data[0] == Catch::Approx(-adam_term).margin(1e-15));

    // alpha = 0 must be plain Adam, bit for bit, even for decayed weights
    Model<double> a(cfg, 3), b(cfg, 3);
    AdamWState<double> sa = AdamWState<double>::init(a), sb = AdamWState<double>::init(b);
    Graph<double> ga, gb;
    ForwardPass<double> fa(a, ga), fb(b, gb);
    Rng grad_rng(5);
    for (size_t i = 0; i < a.params().size(); ++i) {
        Tensor<double>& gra = ga.grad_ref(fa.param_var(i).index());
        Tensor<double>& grb = gb.grad_ref(fb.param_var(i).index());
        for (size_t j = 0; j < gra.size(); ++j) gra.data[j] = grb.data[j] = grad_rng.next_double();
    }
    adamw_step(a, fa, sa, 1e-3, 0.0);
    // reference pure Adam on b, bias corrections spelled the same way so
    // the only possible divergence is a decay term
    const double bc1 = 1.0 - std::pow(0.9, 1.0);
    const double bc2 = 1.0 - std::pow(0.999, 1.0);
    for (size_t i = 0; i < b.params().size(); ++i) {
        Tensor<double>& w = b.params()[i].tensor;
        const Tensor<double>& gr = gb.grad_ref(fb.param_var(i).index());
        for (size_t j = 0; j < w.size(); ++j) {
            const double gj = gr.data[j];
            const double mj = (1.0 - 0.9) * gj;
            const double vj = (1.0 - 0.999) * gj * gj;
            w.data[j] = w.data[j] - 1e-3 * (mj / bc1) / (std::sqrt(vj / bc2) + 1e-8);
        }
    }
    for (size_t i = 0; i < a.params().size(); ++i)
        REQUIRE(a.params()[i].tensor.data == b.params()[i].tensor.data);
}

TEST_CASE("adamw aborts untouched on non-finite gradients") {
    const ModelConfig cfg = tiny_config(8);
    Model<double> model(cfg, 9);
    const std::vector<NamedTensor<double>> before = model.params();
    AdamWState<double> st = AdamWState<double>::init(model);

    Graph<double> g(false);  // allow the poisoned gradient onto the tape
    ForwardPass<double> fp(model, g);
    for (size_t i = 0; i < model.params().size(); ++i)
        g.grad_ref(fp.param_var(i).index()).fill(1.0);
    g.grad_ref(fp.param_var(2).index()).data[0] = std::numeric_limits<double>::infinity();

    REQUIRE_THROWS_AS(adamw_step(model, fp, st, 1e-3, 0.01), NumericError);
    REQUIRE(st.t == 0);
    for (size_t i = 0; i < before.size(); ++i)
        REQUIRE(model.params()[i].tensor.data == before[i].tensor.data);
}

TEST_CASE("encoding remaps through the vocabulary map") {
    const Vocab& v = vocab();
    const auto words = vocab_words(6);
    // reduced space holding only the first three words
    TokenSet allowed = TokenSet::from_ids({v.id_of(words[0]), v.id_of(words[1]), v.id_of(words[2])});
    const VocabMap vmap = VocabMap::reduced(allowed, v);

    const std::string in_text = words[0] + " " + words[2];
    const std::string out_text = words[0] + " " + words[4];
    const auto enc = encode_texts({in_text, out_text}, v, vmap, 8);
    REQUIRE(enc.size() == 2);
    REQUIRE(enc[0].ids[0] == vmap.special_subs[2]);  // [CLS]
    REQUIRE(enc[0].ids[1] == vmap.to_sub(v.id_of(words[0])));
    REQUIRE(enc[0].ids[2] == vmap.to_sub(v.id_of(words[2])));
    REQUIRE(enc[0].ids[3] == vmap.special_subs[3]);  // [SEP]
    REQUIRE(enc[0].ids[4] == vmap.special_subs[0]);  // [PAD]
    REQUIRE(enc[1].ids[2] == vmap.unk_sub);          // words[4] is outside the map

    const Batch b = gather_batch(enc, {1, 0}, 0, 2);
    REQUIRE(b.bsz == 2);
    REQUIRE(b.seq == 8);
    REQUIRE(b.ids[2] == vmap.unk_sub);               // order swapped the rows
}

TEST_CASE("argmax breaks ties toward the lower label") {
    const double row[4] = {1.0, 3.0, 3.0, 0.0};
    REQUIRE(argmax_label(row, 4) == 1);
    const double flat[3] = {0.0, 0.0, 0.0};
    REQUIRE(argmax_label(flat, 3) == 0);
}

TEST_CASE("evaluate scores a forced-prediction model exactly") {
    const Vocab& v = vocab();
    const auto words = vocab_words(4);
    TokenSet allowed = TokenSet::from_ids(
        {v.id_of(words[0]), v.id_of(words[1]), v.id_of(words[2]), v.id_of(words[3])});
    const VocabMap vmap = VocabMap::reduced(allowed, v);
    ModelConfig cfg = tiny_config(vmap.sub_size(), 3);
    Model<float> model(cfg, 4);

    // zero the head weight and bake the prediction into the bias
    model.tensor("cls.w").fill(0.0f);
    model.tensor("cls.b") = Tensor<float>({3}, std::vector<float>{0.0f, 5.0f, 1.0f});

    std::vector<Instance> test{{words[0], 1}, {words[1], 0}, {words[2], 1}, {words[3], 2}};
    const EvalResult r = evaluate(model, test, v, vmap, 2);
    REQUIRE(r.predictions == std::vector<int32_t>{1, 1, 1, 1});
    REQUIRE(r.accuracy == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(r.per_label_accuracy == std::vector<double>{0.0, 1.0, 0.0});
    REQUIRE(r.per_label_total == std::vector<size_t>{1, 2, 1});

    std::vector<Instance> empty;
    REQUIRE_THROWS_AS(evaluate(model, empty, v, vmap, 2), DataError);
    std::vector<Instance> bad{{words[0], 3}};
    REQUIRE_THROWS_AS(evaluate(model, bad, v, vmap, 2), DataError);
}

namespace {

struct PretrainFixture {
    Corpus corpus;
    CorpusSubset subset;
    VocabMap vmap;
    ModelConfig cfg;

    explicit PretrainFixture(size_t n_paragraphs = 12) {
        const Vocab& v = vocab();
        const auto words = vocab_words(10);
        Rng rng(77);
        for (size_t i = 0; i < n_paragraphs; ++i) {
            Paragraph p;
            for (size_t w = 0; w < 6; ++w) {
                if (w) p.text += ' ';
                p.text += words[rng.next_below(words.size())];
            }
            p.tokens = tokenize_ids(p.text, v);
            std::sort(p.tokens.begin(), p.tokens.end());
            corpus.paragraphs.push_back(std::move(p));
        }
        subset = sample_random_subset(corpus, n_paragraphs, 1);
        vmap = VocabMap::reduced(subset.t_w, v);
        cfg = tiny_config(vmap.sub_size());
        cfg.max_positions = 8;
    }
};

}  // namespace

TEST_CASE("pretraining starts near the uniform-guess loss and reduces it") {
    PretrainFixture fx;
    TrainConfig tc;
    tc.epochs = 12;
    tc.batch_size = 4;
    tc.eta = 1e-3;
    tc.alpha = 0.01;
    tc.seed = 5;

    const PretrainResult<float> r = pretrain<float>(fx.corpus, fx.subset, fx.cfg, tc, vocab(), fx.vmap);
    REQUIRE(r.epoch_loss.size() == 12);
    const double uniform = std::log(static_cast<double>(fx.cfg.vocab_size));
    REQUIRE(std::abs(r.epoch_loss[0] - uniform) / uniform < 0.15);
    REQUIRE(r.epoch_loss.back() < r.epoch_loss.front());

    REQUIRE(r.meta.epochs == 12);
    REQUIRE(r.meta.eta == 1e-3);
    REQUIRE(r.meta.alpha == 0.01);
    REQUIRE(r.meta.seed == 5);
    REQUIRE(r.meta.subset_hash == subset_manifest_hash(fx.subset));
    REQUIRE(r.meta.sub_vocab == fx.vmap.sub_to_full);
}

TEST_CASE("pretraining is deterministic given the seed") {
    PretrainFixture fx;
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.eta = 1e-3;
    tc.seed = 8;

    const PretrainResult<float> a = pretrain<float>(fx.corpus, fx.subset, fx.cfg, tc, vocab(), fx.vmap);
    const PretrainResult<float> b = pretrain<float>(fx.corpus, fx.subset, fx.cfg, tc, vocab(), fx.vmap);
    REQUIRE(a.epoch_loss == b.epoch_loss);
    REQUIRE(encode_checkpoint(a.model, a.meta) == encode_checkpoint(b.model, b.meta));

    tc.seed = 9;
    const PretrainResult<float> c = pretrain<float>(fx.corpus, fx.subset, fx.cfg, tc, vocab(), fx.vmap);
    REQUIRE(a.epoch_loss != c.epoch_loss);
}

TEST_CASE("pretraining rejects empty subsets and vocabulary mismatches") {
    PretrainFixture fx;
    TrainConfig tc;
    CorpusSubset empty;
    REQUIRE_THROWS_AS(pretrain<float>(fx.corpus, empty, fx.cfg, tc, vocab(), fx.vmap), DataError);

    ModelConfig wrong = fx.cfg;
    wrong.vocab_size = fx.vmap.sub_size() + 1;
    REQUIRE_THROWS_AS(pretrain<float>(fx.corpus, fx.subset, wrong, tc, vocab(), fx.vmap),
                      std::invalid_argument);
}

TEST_CASE("finetuning transfers a pretrained encoder and differs from scratch") {
    PretrainFixture fx;
    const Vocab& v = vocab();
    const auto words = vocab_words(10);

    ClassificationDataset data;
    data.n_labels = 2;
    for (int i = 0; i < 8; ++i) {
        data.train.push_back({words[i % 4] + " " + words[(i + 1) % 4], i % 2});
        data.test.push_back({words[i % 4], i % 2});
    }

    TrainConfig pt;
    pt.epochs = 2;
    pt.batch_size = 4;
    pt.eta = 1e-3;
    pt.seed = 5;
    const PretrainResult<float> pre = pretrain<float>(fx.corpus, fx.subset, fx.cfg, pt, vocab(), fx.vmap);
    const LoadedCheckpoint<float> ckpt =
        decode_checkpoint<float>(encode_checkpoint(pre.model, pre.meta), "<mem>");

    TrainConfig ft;
    ft.epochs = 2;
    ft.batch_size = 4;
    ft.eta = 1e-3;
    ft.seed = 11;
    ft.patience = 0;

    const FinetuneResult<float> with_enc = finetune<float>(data, fx.cfg, ft, v, fx.vmap, &ckpt);
    const FinetuneResult<float> scratch = finetune<float>(data, fx.cfg, ft, v, fx.vmap);
    REQUIRE(with_enc.epochs_run == 2);
    REQUIRE(with_enc.best_epoch >= 1);
    REQUIRE(with_enc.best_epoch <= 2);
    REQUIRE(with_enc.best_accuracy >= 0.0);
    REQUIRE(with_enc.best_accuracy <= 1.0);
    REQUIRE(with_enc.epoch_loss != scratch.epoch_loss);  // different starting encoders

    const FinetuneResult<float> scratch2 = finetune<float>(data, fx.cfg, ft, v, fx.vmap);
    REQUIRE(scratch.epoch_loss == scratch2.epoch_loss);
    REQUIRE(encode_checkpoint(scratch.model, TrainMeta{}) ==
            encode_checkpoint(scratch2.model, TrainMeta{}));
}

TEST_CASE("finetuning stops after patience epochs without improvement") {
    const Vocab& v = vocab();
    const auto words = vocab_words(4);
    TokenSet allowed = TokenSet::from_ids(
        {v.id_of(words[0]), v.id_of(words[1]), v.id_of(words[2]), v.id_of(words[3])});
    const VocabMap vmap = VocabMap::reduced(allowed, v);
    const ModelConfig cfg = tiny_config(vmap.sub_size());

    // both test instances share one text, so accuracy is pinned at 1/2 and
    // can never improve past epoch one
    ClassificationDataset data;
    data.n_labels = 2;
    for (int i = 0; i < 6; ++i) data.train.push_back({words[i % 4], i % 2});
    data.test.push_back({words[0], 0});
    data.test.push_back({words[0], 1});

    TrainConfig tc;
    tc.epochs = 40;
    tc.batch_size = 4;
    tc.eta = 1e-3;
    tc.seed = 2;
    tc.patience = 3;
    const FinetuneResult<float> r = finetune<float>(data, cfg, tc, v, vmap);
    REQUIRE(r.best_accuracy == 0.5);
    REQUIRE(r.best_epoch == 1);
    REQUIRE(r.epochs_run == 4);  // one best epoch plus three stale ones

    tc.patience = 0;  // disabled: run the full schedule
    const FinetuneResult<float> full = finetune<float>(data, cfg, tc, v, vmap);
    REQUIRE(full.epochs_run == 40);
}

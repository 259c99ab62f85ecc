// Acceptance checks for the whole framework. Each check prints exactly one
// PASS/FAIL line; the process exits nonzero if any check fails. Run with a
// list of check numbers to execute a subset, e.g. `acceptance 8 9`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tlm/harness.hpp"
#include "tlm/ops.hpp"

using namespace tlm;

namespace {

std::string source_dir() {
    const char* env = std::getenv("TLM_SOURCE_DIR");
    return env && *env ? env : ".";
}

std::string binary_dir() {
    const char* env = std::getenv("TLM_BINARY_DIR");
    return env && *env ? env : ".";
}

std::string work_dir() {
    static const std::string dir = [] {
        std::string d = "/tmp/tlm_acceptance";
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

const Vocab& vocab() {
    static Vocab v = Vocab::load(source_dir() + "/data/vocab/wordpiece_30522.txt");
    return v;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double secs() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

std::string fmt_sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2e", v);
    return buf;
}

Outcome finish(const Timer& t, double limit_secs, bool ok, std::string detail) {
    const double secs = t.secs();
    detail += " [" + fmt(secs, 1) + "s of " + fmt(limit_secs, 0) + "s]";
    if (secs > limit_secs) {
        ok = false;
        detail += " OVER TIME LIMIT";
    }
    return {ok, detail};
}

// ---------------------------------------------------------------------------
// 1. Finite-difference gradient checks, every primitive plus a composed
//    model, 64-bit, relative error at most 1e-4.
// ---------------------------------------------------------------------------

using BuildFn = std::function<Var<double>(Graph<double>&, std::vector<Var<double>>&)>;

Tensor<double> random_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (double& v : t.data) v = lo + (hi - lo) * rng.next_double();
    return t;
}

Var<double> weighted_sum(Graph<double>& g, Var<double> y, uint64_t seed = 99) {
    Rng rng(seed);
    Tensor<double> w = random_tensor(y.shape(), rng, 0.1, 1.1);
    return ops::sum(ops::mul(y, g.constant(std::move(w))));
}

double eval_loss(const BuildFn& build, std::vector<Tensor<double>>& params) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (Tensor<double>& p : params) vars.push_back(g.parameter(p));
    return build(g, vars).value().data[0];
}

// Central differences over every element of every parameter; returns the
// worst relative error seen (with an absolute floor near zero).
double max_rel_error(const BuildFn& build, std::vector<Tensor<double>> params, size_t& n_checked) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (Tensor<double>& p : params) vars.push_back(g.parameter(p));
    Var<double> loss = build(g, vars);
    g.backward(loss);
    std::vector<Tensor<double>> analytic;
    for (const Var<double>& v : vars) analytic.push_back(v.grad());

    const double h = 1e-5;
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        for (size_t i = 0; i < params[pi].size(); ++i) {
            const double orig = params[pi].data[i];
            params[pi].data[i] = orig + h;
            const double lp = eval_loss(build, params);
            params[pi].data[i] = orig - h;
            const double lm = eval_loss(build, params);
            params[pi].data[i] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = analytic[pi].data[i];
            worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}));
            ++n_checked;
        }
    }
    return worst;
}

Outcome check_gradients() {
    Timer t;
    const double tol = 1e-4;
    Rng rng(1);
    double worst = 0.0;
    size_t n_checked = 0;
    std::string failed;

    const auto run = [&](const char* name, const BuildFn& build, std::vector<Tensor<double>> params) {
        const double rel = max_rel_error(build, std::move(params), n_checked);
        worst = std::max(worst, rel);
        if (rel > tol && failed.empty()) failed = name;
    };

    run("add/mul/scale",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::add(ops::mul(p[0], p[1]), ops::scale(p[2], 0.7)));
        },
        {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
    run("add_bias rank2",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::add_bias(p[0], p[1]));
        },
        {random_tensor({4, 3}, rng), random_tensor({3}, rng)});
    run("add_bias rank3",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::add_bias(p[0], p[1]));
        },
        {random_tensor({2, 3, 4}, rng), random_tensor({3, 4}, rng)});
    run("reshape+permute",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::permute(ops::reshape(p[0], {2, 3, 4}), {2, 0, 1}));
        },
        {random_tensor({6, 4}, rng)});
    run("slice_axis",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::slice_axis(p[0], 1, 1, 2));
        },
        {random_tensor({3, 4, 2}, rng)});
    run("matmul rank2",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::matmul(p[0], p[1]));
        },
        {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
    run("matmul batched",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::matmul(p[0], p[1]));
        },
        {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)});
    run("matmul_nt",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::matmul_nt(p[0], p[1]));
        },
        {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)});
    run("gather_rows",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::gather_rows(p[0], {0, 2, 2, 1}));
        },
        {random_tensor({4, 5}, rng)});
    run("softmax",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::softmax(p[0], 1));
        },
        {random_tensor({3, 5}, rng, -2.0, 2.0)});
    const Tensor<double> key_mask({2, 4}, std::vector<double>{1, 1, 1, 0, 1, 0, 1, 1});
    run("masked_softmax_last",
        [key_mask](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::masked_softmax_last(p[0], key_mask));
        },
        {random_tensor({2, 2, 4, 4}, rng, -2.0, 2.0)});
    run("layer_norm",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::layer_norm(p[0], p[1], p[2], 1e-12));
        },
        {random_tensor({3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5), random_tensor({6}, rng)});
    run("gelu",
        [](Graph<double>& g, std::vector<Var<double>>& p) { return weighted_sum(g, ops::gelu(p[0])); },
        {random_tensor({4, 4}, rng, -3.0, 3.0)});
    run("conv2d_same 3x3",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::conv2d_same(p[0], p[1], p[2]));
        },
        {random_tensor({2, 3, 5, 4}, rng), random_tensor({2, 3, 3, 3}, rng), random_tensor({2}, rng)});
    run("conv2d_same 2x2",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return weighted_sum(g, ops::conv2d_same(p[0], p[1], p[2]));
        },
        {random_tensor({1, 2, 4, 4}, rng), random_tensor({3, 2, 2, 2}, rng), random_tensor({3}, rng)});
    run("sum",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return ops::sum(ops::mul(p[0], p[0]));
        },
        {random_tensor({3, 3}, rng)});
    run("masked_cross_entropy",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            return ops::masked_cross_entropy(p[0], {2, ops::kIgnoreLabel, 0, 4}).loss;
        },
        {random_tensor({4, 5}, rng, -2.0, 2.0)});
    run("dropout",
        [](Graph<double>& g, std::vector<Var<double>>& p) {
            Rng drng(55);  // replayed mask keeps the loss deterministic
            return weighted_sum(g, ops::dropout(p[0], 0.4, drng));
        },
        {random_tensor({4, 6}, rng)});

    // composed micro model: conv front end, one attention block, tied MLM
    // decoder and the classifier head
    ModelConfig cfg;
    cfg.blocks = 1;
    cfg.heads = 2;
    cfg.head_dim = 8;
    cfg.hidden = 16;
    cfg.ffn_mult = 2;
    cfg.conv_layers = {{4, 3, 3}};
    cfg.vocab_size = 50;
    cfg.max_positions = 16;
    cfg.num_labels = 3;
    cfg.dropout = 0.0;
    Model<double> model(cfg, 1234);

    Batch batch;
    batch.bsz = 2;
    batch.seq = 16;
    Rng brng(5);
    for (size_t i = 0; i < 32; ++i) {
        batch.ids.push_back(static_cast<int32_t>(brng.next_below(50)));
        batch.mask.push_back(i % 16 < 13 ? 1 : 0);
    }
    std::vector<int32_t> targets(32, ops::kIgnoreLabel);
    targets[0] = 7;
    targets[5] = 49;
    targets[17] = 0;
    targets[28] = 23;

    const auto mlm_loss = [&]() {
        Graph<double> g;
        ForwardPass<double> fp(model, g);
        Var<double> flat = ops::reshape(fp.mlm_logits(batch), {32, cfg.vocab_size});
        return ops::masked_cross_entropy(flat, targets).loss.value().data[0];
    };
    {
        Graph<double> g;
        ForwardPass<double> fp(model, g);
        Var<double> flat = ops::reshape(fp.mlm_logits(batch), {32, cfg.vocab_size});
        g.backward(ops::masked_cross_entropy(flat, targets).loss);
        const double h = 1e-5;
        auto& params = model.params();
        for (size_t pi = 0; pi < params.size(); ++pi) {
            Tensor<double>& w = params[pi].tensor;
            const Tensor<double>& an = fp.param_var(pi).grad();
            const size_t stride = w.size() > 128 ? 7 : 1;  // spot-check the big tables
            for (size_t i = 0; i < w.size(); i += stride) {
                const double orig = w.data[i];
                w.data[i] = orig + h;
                const double lp = mlm_loss();
                w.data[i] = orig - h;
                const double lm = mlm_loss();
                w.data[i] = orig;
                const double fd = (lp - lm) / (2.0 * h);
                const double rel =
                    std::abs(an.data[i] - fd) / std::max({std::abs(an.data[i]), std::abs(fd), 1e-6});
                worst = std::max(worst, rel);
                ++n_checked;
                if (rel > tol && failed.empty()) failed = "composed/" + params[pi].name;
            }
        }
    }
    {
        Graph<double> g;
        ForwardPass<double> fp(model, g);
        g.backward(ops::masked_cross_entropy(fp.classify_logits(batch), {1, 2}).loss);
        const auto cls_loss = [&]() {
            Graph<double> gg;
            ForwardPass<double> ff(model, gg);
            return ops::masked_cross_entropy(ff.classify_logits(batch), {1, 2}).loss.value().data[0];
        };
        const double h = 1e-5;
        for (const char* name : {"cls.w", "cls.b"}) {
            const size_t pi = model.param_index(name);
            Tensor<double>& w = model.params()[pi].tensor;
            const Tensor<double>& an = fp.param_var(pi).grad();
            for (size_t i = 0; i < w.size(); ++i) {
                const double orig = w.data[i];
                w.data[i] = orig + h;
                const double lp = cls_loss();
                w.data[i] = orig - h;
                const double lm = cls_loss();
                w.data[i] = orig;
                const double fd = (lp - lm) / (2.0 * h);
                const double rel =
                    std::abs(an.data[i] - fd) / std::max({std::abs(an.data[i]), std::abs(fd), 1e-6});
                worst = std::max(worst, rel);
                ++n_checked;
                if (rel > tol && failed.empty()) failed = std::string("composed/") + name;
            }
        }
    }

    std::string detail = "max rel err " + fmt_sci(worst) + " over " + std::to_string(n_checked) +
                         " derivatives (tol 1e-4)";
    if (!failed.empty()) detail += ", first failure in " + failed;
    return finish(t, 60.0, worst <= tol && failed.empty(), detail);
}

// ---------------------------------------------------------------------------
// 2. Tokenizer parity with the committed golden file.
// ---------------------------------------------------------------------------

Outcome check_tokenizer_golden() {
    Timer t;
    std::ifstream corpus(source_dir() + "/data/golden/golden_corpus.txt", std::ios::binary);
    std::ifstream golden(source_dir() + "/data/golden/golden_tokens.txt", std::ios::binary);
    if (!corpus || !golden) return {false, "golden files missing under data/golden/"};

    size_t lines = 0, mismatches = 0;
    std::string text, want;
    while (std::getline(corpus, text)) {
        if (!std::getline(golden, want)) return {false, "golden token file is shorter than the corpus"};
        ++lines;
        const std::vector<std::string> pieces = tokenize(text, vocab());
        std::string got;
        for (size_t i = 0; i < pieces.size(); ++i) {
            if (i) got += ' ';
            got += pieces[i];
        }
        if (got != want) ++mismatches;
    }
    std::string extra;
    if (std::getline(golden, extra)) return {false, "golden token file is longer than the corpus"};

    const std::string detail = std::to_string(lines - mismatches) + "/" + std::to_string(lines) +
                               " samples identical";
    return finish(t, 10.0, lines == 1000 && mismatches == 0, detail);
}

// ---------------------------------------------------------------------------
// 3. Masking statistics.
// ---------------------------------------------------------------------------

Outcome check_masking_stats() {
    Timer t;
    const size_t bsz = 850, seq = 128;
    Batch b;
    b.bsz = bsz;
    b.seq = seq;
    const std::array<int32_t, 5> specials{0, 100, 101, 102, 103};
    Rng fill(2024);
    size_t candidates = 0;
    for (size_t r = 0; r < bsz; ++r) {
        for (size_t c = 0; c < seq; ++c) {
            if (c == 0) {
                b.ids.push_back(101);  // [CLS]
                b.mask.push_back(1);
            } else if (c == seq - 3) {
                b.ids.push_back(102);  // [SEP]
                b.mask.push_back(1);
            } else if (c >= seq - 2) {
                b.ids.push_back(0);  // padding
                b.mask.push_back(0);
            } else {
                b.ids.push_back(static_cast<int32_t>(104 + fill.next_below(30522 - 104)));
                b.mask.push_back(1);
                ++candidates;
            }
        }
    }

    Rng rng(42);
    const MaskedBatch mb = mask_batch(b, specials, 103, 30522, rng);

    size_t to_mask = 0, to_random = 0, kept = 0, special_hits = 0;
    for (size_t i = 0; i < b.ids.size(); ++i) {
        const bool is_special =
            std::find(specials.begin(), specials.end(), b.ids[i]) != specials.end();
        if (mb.labels[i] == ops::kIgnoreLabel) continue;
        if (is_special || !b.mask[i]) {
            ++special_hits;
            continue;
        }
        if (mb.batch.ids[i] == 103)
            ++to_mask;
        else if (mb.batch.ids[i] == b.ids[i])
            ++kept;
        else
            ++to_random;
    }
    const double n_sel = static_cast<double>(mb.n_selected);
    const double sel_rate = n_sel / static_cast<double>(candidates);
    const double f_mask = to_mask / n_sel, f_rand = to_random / n_sel, f_keep = kept / n_sel;

    const bool ok = candidates >= 100000 && std::abs(sel_rate - 0.15) <= 0.005 &&
                    std::abs(f_mask - 0.80) <= 0.015 && std::abs(f_rand - 0.10) <= 0.015 &&
                    std::abs(f_keep - 0.10) <= 0.015 && special_hits == 0;
    const std::string detail = std::to_string(candidates) + " candidates, select " + fmt(sel_rate) +
                               " (want 0.150+-0.005), split " + fmt(f_mask, 3) + "/" + fmt(f_rand, 3) +
                               "/" + fmt(f_keep, 3) + " (want 0.80/0.10/0.10 +-0.015), " +
                               std::to_string(special_hits) + " special selections";
    return finish(t, 10.0, ok, detail);
}

// ---------------------------------------------------------------------------
// 4. Subset and overlap algebra against brute force.
// ---------------------------------------------------------------------------

struct BruteCorpus {
    std::vector<std::vector<int32_t>> paragraphs;
    std::map<int32_t, uint64_t> tc_freq;
};

std::set<int32_t> brute_union(const BruteCorpus& bc, const std::vector<size_t>& indices) {
    std::set<int32_t> u;
    for (size_t i : indices) u.insert(bc.paragraphs[i].begin(), bc.paragraphs[i].end());
    return u;
}

std::vector<size_t> brute_filter(const BruteCorpus& bc, const std::set<int32_t>& allowed) {
    std::vector<size_t> out;
    for (size_t i = 0; i < bc.paragraphs.size(); ++i) {
        bool ok = true;
        for (int32_t tok : bc.paragraphs[i])
            if (!allowed.count(tok)) {
                ok = false;
                break;
            }
        if (ok) out.push_back(i);
    }
    return out;
}

Outcome check_set_algebra() {
    Timer t;
    std::mt19937_64 gen(20250814);
    size_t checks = 0;
    std::string failure;

    const auto fail = [&](int trial, const std::string& what) {
        if (failure.empty()) failure = "trial " + std::to_string(trial) + ": " + what;
    };

    for (int trial = 0; trial < 100 && failure.empty(); ++trial) {
        BruteCorpus bc;
        std::uniform_int_distribution<size_t> n_paras(1, 1000), n_toks(0, 40), tc_size(1, 60);
        std::uniform_int_distribution<int32_t> token(0, 399);
        std::uniform_int_distribution<uint64_t> weight(1, 9);
        bc.paragraphs.resize(n_paras(gen));
        for (auto& p : bc.paragraphs) {
            const size_t len = n_toks(gen);
            for (size_t i = 0; i < len; ++i) p.push_back(token(gen));
        }
        const size_t n_tc = tc_size(gen);
        for (size_t i = 0; i < n_tc; ++i) bc.tc_freq[token(gen)] += weight(gen);

        Corpus corpus;
        for (const auto& toks : bc.paragraphs) {
            Paragraph p;
            p.tokens = toks;
            std::sort(p.tokens.begin(), p.tokens.end());
            corpus.paragraphs.push_back(std::move(p));
        }
        TokenSet tc;
        tc.freq = bc.tc_freq;
        tc.has_freq = true;
        tc.rebuild_ids_from_freq();

        // custom subset: paragraphs covered by an allowed set, union, overlap
        std::set<int32_t> allowed_brute(tc.ids.begin(), tc.ids.end());
        for (size_t i = 0; i < bc.paragraphs.size(); i += 3)
            allowed_brute.insert(bc.paragraphs[i].begin(), bc.paragraphs[i].end());
        TokenSet allowed =
            TokenSet::from_ids(std::vector<int32_t>(allowed_brute.begin(), allowed_brute.end()));

        const CorpusSubset s = build_custom_subset(corpus, allowed);
        if (s.indices != brute_filter(bc, allowed_brute)) fail(trial, "custom subset indices");
        const std::set<int32_t> want_tw = brute_union(bc, s.indices);
        if (s.t_w.ids != std::vector<int32_t>(want_tw.begin(), want_tw.end()))
            fail(trial, "custom subset T_W");

        const OverlapReport r = compute_overlap_metrics(s, tc);
        size_t want_tm = 0;
        uint64_t total = 0, covered = 0;
        for (const auto& [id, n] : bc.tc_freq) {
            total += n;
            if (want_tw.count(id))
                covered += n;
            else
                ++want_tm;
        }
        const double want_overlap =
            total == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(total);
        if (r.t_m != want_tm || r.t_w_size != want_tw.size() || r.t_c_size != bc.tc_freq.size() ||
            std::abs(r.weighted_overlap - want_overlap) > 1e-12)
            fail(trial, "overlap metrics");

        // random subset: size, uniqueness, union
        const size_t k = 1 + trial % 50;
        const CorpusSubset rs = sample_random_subset(corpus, k, 5000 + trial);
        const std::set<size_t> uniq(rs.indices.begin(), rs.indices.end());
        if (rs.indices.size() != std::min(k, corpus.size()) || uniq.size() != rs.indices.size())
            fail(trial, "random subset shape");
        const std::set<int32_t> want_rw = brute_union(bc, rs.indices);
        if (rs.t_w.ids != std::vector<int32_t>(want_rw.begin(), want_rw.end()))
            fail(trial, "random subset T_W");

        // inflated subset: independent restatement of the recipe
        const double frac = (trial % 5) * 0.25;
        const uint64_t budget = trial % 3 == 0 ? kUnlimitedFiller : 50 + trial;
        std::map<int32_t, uint64_t> cfreq;
        for (const auto& p : bc.paragraphs)
            for (int32_t tok : p) ++cfreq[tok];
        const auto freq_of = [&](int32_t id) {
            auto it = cfreq.find(id);
            return it == cfreq.end() ? uint64_t(0) : it->second;
        };
        std::vector<int32_t> by_rarity(tc.ids.begin(), tc.ids.end());
        std::sort(by_rarity.begin(), by_rarity.end(), [&](int32_t a, int32_t b) {
            return freq_of(a) != freq_of(b) ? freq_of(a) < freq_of(b) : a < b;
        });
        const size_t n_excl =
            static_cast<size_t>(std::ceil(frac * static_cast<double>(tc.ids.size())));
        std::set<int32_t> allowed_infl;
        for (size_t i = std::min(n_excl, by_rarity.size()); i < by_rarity.size(); ++i)
            allowed_infl.insert(by_rarity[i]);
        std::vector<int32_t> fillers;
        for (int32_t id = 0; id < 400; ++id)
            if (!std::binary_search(tc.ids.begin(), tc.ids.end(), id)) fillers.push_back(id);
        if (budget < fillers.size()) {
            std::sort(fillers.begin(), fillers.end(), [&](int32_t a, int32_t b) {
                return freq_of(a) != freq_of(b) ? freq_of(a) > freq_of(b) : a < b;
            });
            fillers.resize(budget);
        }
        allowed_infl.insert(fillers.begin(), fillers.end());

        const CorpusSubset infl = build_inflated_tm_subset(corpus, tc, frac, budget, 400);
        if (infl.indices != brute_filter(bc, allowed_infl)) fail(trial, "inflated subset indices");
        const std::set<int32_t> want_iw = brute_union(bc, infl.indices);
        if (infl.t_w.ids != std::vector<int32_t>(want_iw.begin(), want_iw.end()))
            fail(trial, "inflated subset T_W");
        checks += 10;
    }

    std::string detail = "100 random corpora, custom/random/inflated recipes and overlap metrics";
    if (!failure.empty()) detail += "; FIRST FAILURE " + failure;
    return finish(t, 30.0, failure.empty(), detail);
}

// ---------------------------------------------------------------------------
// Shared fixture for the tool runs: a small synthetic benchmark on disk
// plus a micro experiment config.
// ---------------------------------------------------------------------------

struct ToolFixture {
    std::string dir;
    std::string config_path;

    ToolFixture() {
        dir = work_dir() + "/tool";
        std::filesystem::create_directories(dir);
        SynthConfig cfg;
        cfg.vocab_words = 60;
        cfg.topics = 3;
        cfg.background_words = 12;
        cfg.corpus_paragraphs = 60;
        cfg.train_per_label = 6;
        cfg.test_per_label = 8;
        cfg.min_words = 6;
        cfg.max_words = 12;
        cfg.seed = 19;
        const SynthData d = generate_synthetic(cfg, vocab());
        write_lines(dir + "/corpus.txt", d.corpus_lines);
        write_instances(dir + "/train.tsv", d.dataset.train);
        write_instances(dir + "/test.tsv", d.dataset.test);

        config_path = dir + "/gap.cfg";
        std::ofstream f(config_path, std::ios::binary);
        f << "corpus " << dir << "/corpus.txt\n"
          << "train " << dir << "/train.tsv\n"
          << "test " << dir << "/test.tsv\n"
          << "subset.kind random\nsubset.size 24\nsubset.seed 3\n"
          << "model.blocks 1\nmodel.heads 2\nmodel.head_dim 4\nmodel.ffn_mult 2\n"
          << "model.max_positions 16\nmodel.dropout 0.1\nmodel.reduced_vocab true\n"
          << "pretrain.epochs 3\npretrain.batch 8\npretrain.eta 1e-3\npretrain.seed 42\n"
          << "finetune.epochs 3\nfinetune.batch 8\nfinetune.eta 1e-3\nfinetune.seed 42\n"
          << "finetune.patience 0\n"
          << "repetitions 2\n";
    }

    int run_gap(const std::string& format, const std::string& out, const std::string& log) const {
        const std::string cmd = "\"" + binary_dir() + "/tlm\" gap --config \"" + config_path +
                                "\" --vocab \"" + source_dir() +
                                "/data/vocab/wordpiece_30522.txt\" --deterministic --format " +
                                format + " --out \"" + out + "\" > \"" + log + "\" 2>&1";
        return std::system(cmd.c_str());
    }
};

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// 5. Deterministic tool runs are byte-identical.
// ---------------------------------------------------------------------------

Outcome check_deterministic_tool() {
    Timer t;
    const ToolFixture fx;
    const std::string r1 = fx.dir + "/run1.md", r2 = fx.dir + "/run2.md";
    const int rc1 = fx.run_gap("markdown", r1, fx.dir + "/run1.log");
    const int rc2 = fx.run_gap("markdown", r2, fx.dir + "/run2.log");
    if (rc1 != 0 || rc2 != 0)
        return {false, "tlm gap exited with " + std::to_string(rc1) + " and " + std::to_string(rc2) +
                           ", logs in " + fx.dir};
    const std::string a = read_file(r1), b = read_file(r2);
    const bool ok = !a.empty() && a == b;
    const std::string detail = "two `tlm gap --deterministic` runs, " + std::to_string(a.size()) +
                               " bytes each, " + (ok ? "byte-identical" : "DIFFER");
    return finish(t, 300.0, ok, detail);
}

// ---------------------------------------------------------------------------
// 6. Committee semantics.
// ---------------------------------------------------------------------------

Outcome check_committee() {
    Timer t;
    std::string err;

    // a confident member outvotes two lukewarm dissenters
    if (committee_predict({{10.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}}) != 0)
        err = "hand example voted wrong";

    // member order cannot matter
    Rng rng(606);
    std::vector<std::vector<double>> logits(5, std::vector<double>(7));
    for (auto& row : logits)
        for (double& v : row) v = 8.0 * rng.next_double() - 4.0;
    const int32_t base = committee_predict(logits);
    for (int trial = 0; trial < 1000 && err.empty(); ++trial) {
        rng.shuffle(logits);
        if (committee_predict(logits) != base) err = "permutation changed the vote";
    }

    // K copies of one model behave exactly like the model alone, split-wide
    SynthConfig scfg;
    scfg.vocab_words = 40;
    scfg.topics = 2;
    scfg.background_words = 8;
    scfg.corpus_paragraphs = 4;
    scfg.train_per_label = 2;
    scfg.test_per_label = 30;
    scfg.seed = 23;
    const SynthData d = generate_synthetic(scfg, vocab());
    TokenSet seen = extract_token_set(d.dataset, vocab());
    const VocabMap vmap = VocabMap::reduced(seen, vocab());
    ModelConfig mcfg;
    mcfg.blocks = 1;
    mcfg.heads = 2;
    mcfg.head_dim = 4;
    mcfg.hidden = 8;
    mcfg.ffn_mult = 2;
    mcfg.vocab_size = vmap.sub_size();
    mcfg.max_positions = 24;
    mcfg.num_labels = 2;
    mcfg.dropout = 0.0;
    Model<float> m(mcfg, 77);
    std::vector<Model<float>> solo{m};
    std::vector<Model<float>> five{m, m, m, m, m};
    const CommitteeEval one = committee_evaluate(solo, {vmap}, d.dataset.test, vocab());
    const CommitteeEval k5 =
        committee_evaluate(five, {vmap, vmap, vmap, vmap, vmap}, d.dataset.test, vocab());
    if (err.empty() && (k5.predictions != one.predictions || k5.accuracy != one.accuracy))
        err = "five copies disagree with the single model";

    std::string detail = "hand vote, 1000 member permutations, 5-copy identity on " +
                         std::to_string(d.dataset.test.size()) + " instances";
    if (!err.empty()) detail += "; " + err;
    return finish(t, 60.0, err.empty(), detail);
}

// ---------------------------------------------------------------------------
// 7. Layer-count latency.
// ---------------------------------------------------------------------------

Outcome check_latency() {
    Timer t;
    ModelConfig bert6;
    bert6.blocks = 6;
    const size_t l6 = latency(bert6);

    ModelConfig small;
    small.blocks = 1;
    small.conv_layers = {{64, 3, 3}, {64, 3, 3}};
    const size_t l1 = latency(small);

    const bool ok = l6 == 25 && l1 == 7;
    return finish(t, 10.0,  ok,
                  "six blocks -> " + std::to_string(l6) + " (want 25), one block + two conv -> " +
                      std::to_string(l1) + " (want 7)");
}

// ---------------------------------------------------------------------------
// 8. A micro model memorizes a 32-paragraph corpus.
// ---------------------------------------------------------------------------

Outcome check_memorization() {
    Timer t;
    // 32 paragraphs of 12 words each, every word unique, so context plus
    // position determines each masked target exactly
    const std::vector<std::string> words = detail::pick_generator_words(vocab(), 384);
    Corpus corpus;
    for (size_t i = 0; i < 32; ++i) {
        Paragraph p;
        for (size_t w = 0; w < 12; ++w) {
            if (w) p.text += ' ';
            p.text += words[i * 12 + w];
        }
        p.tokens = tokenize_ids(p.text, vocab());
        std::sort(p.tokens.begin(), p.tokens.end());
        corpus.paragraphs.push_back(std::move(p));
    }
    const CorpusSubset subset = sample_random_subset(corpus, 32, 1);
    const VocabMap vmap = VocabMap::reduced(subset.t_w, vocab());

    ModelConfig cfg;
    cfg.blocks = 2;
    cfg.heads = 2;
    cfg.head_dim = 16;
    cfg.hidden = 32;
    cfg.ffn_mult = 2;
    cfg.vocab_size = vmap.sub_size();
    cfg.max_positions = 16;
    cfg.num_labels = 2;
    cfg.dropout = 0.0;

    TrainConfig tc;
    tc.epochs = 500;
    tc.batch_size = 2;
    tc.eta = 1e-3;
    tc.alpha = 0.0;
    tc.seed = 42;

    PretrainResult<float> res = pretrain<float>(corpus, subset, cfg, tc, vocab(), vmap);

    // measure masked-token accuracy over several fresh masking passes
    std::vector<std::string> texts;
    for (const Paragraph& p : corpus.paragraphs) texts.push_back(p.text);
    const std::vector<EncodedSeq> encoded = encode_texts(texts, vocab(), vmap, cfg.max_positions);
    std::vector<size_t> order(encoded.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    const Batch all = gather_batch(encoded, order, 0, encoded.size());

    size_t hits = 0, total = 0;
    for (int pass = 0; pass < 10; ++pass) {
        Rng rng(900 + pass);
        const MaskedBatch mb =
            mask_batch(all, vmap.special_subs, vmap.special_subs[4], vmap.sub_size(), rng);
        Graph<float> g;
        ForwardPass<float> fp(res.model, g);
        const Tensor<float>& logits = fp.mlm_logits(mb.batch).value();
        const size_t v = cfg.vocab_size;
        for (size_t i = 0; i < mb.labels.size(); ++i) {
            if (mb.labels[i] == ops::kIgnoreLabel) continue;
            ++total;
            size_t best = 0;
            for (size_t c = 1; c < v; ++c)
                if (logits.data[i * v + c] > logits.data[i * v + best]) best = c;
            if (static_cast<int32_t>(best) == mb.labels[i]) ++hits;
        }
    }
    const double acc = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
    const std::string detail = "masked-token accuracy " + fmt(acc) + " (want >= 0.99) over " +
                               std::to_string(total) + " masked positions after " +
                               std::to_string(tc.epochs) + " epochs, final loss " +
                               fmt(res.epoch_loss.back());
    return finish(t, 180.0, acc >= 0.99, detail);
}

// ---------------------------------------------------------------------------
// Shared synthetic benchmark for the transfer checks (9 and 10).
// ---------------------------------------------------------------------------

struct TransferFixture {
    std::string dir;

    TransferFixture() {
        dir = work_dir() + "/transfer";
        std::filesystem::create_directories(dir);
        SynthConfig cfg;
        cfg.vocab_words = 200;
        cfg.topics = 4;
        cfg.background_words = 40;
        cfg.corpus_paragraphs = 2400;
        cfg.train_per_label = 8;
        cfg.test_per_label = 32;
        cfg.min_words = 8;
        cfg.max_words = 16;
        cfg.seed = 7;
        const SynthData d = generate_synthetic(cfg, vocab());
        write_lines(dir + "/corpus.txt", d.corpus_lines);
        write_instances(dir + "/train.tsv", d.dataset.train);
        write_instances(dir + "/test.tsv", d.dataset.test);
    }

    // micro BERT-2 experiment over the shared data; the subset recipe lines
    // come from the caller
    ExperimentSpec spec(const std::string& subset_lines) const {
        std::string s;
        s += "corpus " + dir + "/corpus.txt\ntrain " + dir + "/train.tsv\ntest " + dir +
             "/test.tsv\n";
        s += subset_lines;
        s += "model.blocks 2\nmodel.heads 2\nmodel.head_dim 8\nmodel.ffn_mult 2\n";
        s += "model.max_positions 20\nmodel.dropout 0.0\nmodel.reduced_vocab true\n";
        s += "pretrain.epochs 12\npretrain.batch 32\npretrain.eta 1e-3\npretrain.seed 42\n";
        s += "finetune.epochs 20\nfinetune.batch 8\nfinetune.eta 1e-3\nfinetune.seed 42\n";
        s += "finetune.patience 0\n";
        s += "repetitions 5\n";
        return parse_experiment_spec(KvDoc::parse(s));
    }
};

std::string join_accs(const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += fmt(v[i], 3);
    }
    return s;
}

// ---------------------------------------------------------------------------
// 9. More pre-training words help, and any pre-training beats none.
// ---------------------------------------------------------------------------

Outcome check_gap_trend() {
    Timer t;
    const TransferFixture fx;
    const ExperimentSpec big = fx.spec("subset.kind random\nsubset.size 2000\nsubset.seed 3\n");
    const ExperimentSpec small = fx.spec("subset.kind random\nsubset.size 200\nsubset.seed 3\n");

    const GapOutcome<float> r_big = run_gap_experiment<float>(big, vocab());
    const GapOutcome<float> r_small = run_gap_experiment<float>(small, vocab());

    const std::vector<double>& a2000 = r_big.report.acc_pretrained.values;
    const std::vector<double>& a200 = r_small.report.acc_pretrained.values;
    const std::vector<double>& scratch = r_big.report.acc_scratch.values;

    size_t ordered = 0;
    for (size_t r = 0; r < 5; ++r)
        if (a2000[r] > a200[r] && a200[r] > scratch[r]) ++ordered;
    const double m2000 = r_big.report.acc_pretrained.mean();
    const double m200 = r_small.report.acc_pretrained.mean();
    const double mscr = r_big.report.acc_scratch.mean();
    const bool ok = m2000 > m200 && m200 > mscr && ordered >= 4;

    const std::string detail = "mean acc W_S=2000: " + fmt(m2000) + " > W_S=200: " + fmt(m200) +
                               " > scratch: " + fmt(mscr) + "; per-seed ordering " +
                               std::to_string(ordered) + "/5 (want >= 4); seeds [" +
                               join_accs(a2000) + "] [" + join_accs(a200) + "] [" +
                               join_accs(scratch) + "]";
    return finish(t, 900.0, ok, detail);
}

// ---------------------------------------------------------------------------
// 10. An inflated-T_M subset transfers worse than a size-matched random one.
// ---------------------------------------------------------------------------

Outcome check_inflated_tm() {
    Timer t;
    const TransferFixture fx;

    ExperimentSpec infl = fx.spec(
        "subset.kind inflated\nsubset.exclusion_fraction 0.5\nsubset.filler_budget unlimited\n");
    infl.scratch_cfg.epochs = 1;  // the scratch arm is not part of this comparison
    const GapOutcome<float> r_infl = run_gap_experiment<float>(infl, vocab());
    const size_t matched = r_infl.report.overlap.w_s;
    if (matched == 0) return {false, "inflated subset is empty"};

    ExperimentSpec rnd = fx.spec("subset.kind random\nsubset.size " + std::to_string(matched) +
                                 "\nsubset.seed 3\n");
    rnd.scratch_cfg.epochs = 1;
    const GapOutcome<float> r_rnd = run_gap_experiment<float>(rnd, vocab());

    const std::vector<double>& ai = r_infl.report.acc_pretrained.values;
    const std::vector<double>& ar = r_rnd.report.acc_pretrained.values;
    size_t below = 0;
    for (size_t r = 0; r < 5; ++r)
        if (ai[r] < ar[r]) ++below;
    const double mi = r_infl.report.acc_pretrained.mean();
    const double mr = r_rnd.report.acc_pretrained.mean();
    const bool ok = below >= 4 && mi < mr;

    const std::string detail = "matched W_S=" + std::to_string(matched) + ", T_M " +
                               std::to_string(r_infl.report.overlap.t_m) + " vs " +
                               std::to_string(r_rnd.report.overlap.t_m) + ", mean acc inflated " +
                               fmt(mi) + " < random " + fmt(mr) + "; per-seed " +
                               std::to_string(below) + "/5 below (want >= 4); seeds [" +
                               join_accs(ai) + "] [" + join_accs(ar) + "]";
    return finish(t, 900.0, ok, detail);
}

// ---------------------------------------------------------------------------
// 11. Emitted reports parse back losslessly.
// ---------------------------------------------------------------------------

Outcome check_report_roundtrip() {
    Timer t;
    const ToolFixture fx;
    const std::string csv_path = fx.dir + "/schema.csv", md_path = fx.dir + "/schema.md";
    const int rc1 = fx.run_gap("csv", csv_path, fx.dir + "/schema_csv.log");
    const int rc2 = fx.run_gap("markdown", md_path, fx.dir + "/schema_md.log");
    if (rc1 != 0 || rc2 != 0)
        return {false, "tlm gap exited with " + std::to_string(rc1) + " and " + std::to_string(rc2)};

    std::string err;
    const Table from_csv = parse_csv(read_file(csv_path));
    const Table from_md = parse_markdown(read_file(md_path));
    const std::vector<std::string> want{"W_S", "T_W", "T_M", "Acc", "Gap"};
    if (from_csv.header != want) err = "csv header is off";
    if (err.empty() && !(from_csv == from_md)) err = "csv and markdown tables disagree";
    if (err.empty() && from_csv.rows.empty()) err = "report has no data rows";

    // integer columns survive exactly, accuracy columns at printed precision
    for (const auto& row : from_csv.rows) {
        if (!err.empty()) break;
        for (size_t c = 0; c < 3; ++c)
            if (std::to_string(parse_u64(row[c], "cell")) != row[c]) err = "integer cell mangled";
        for (size_t c = 3; c < 5; ++c)
            if (format_acc(parse_double(row[c], "cell")) != row[c]) err = "accuracy cell mangled";
    }
    // and a full emit -> parse cycle is the identity
    if (err.empty() && !(parse_csv(to_csv(from_csv)) == from_csv)) err = "csv cycle not lossless";
    if (err.empty() && !(parse_markdown(to_markdown(from_md)) == from_md)) err = "markdown cycle not lossless";

    std::string detail = std::to_string(from_csv.rows.size()) +
                         " rows, csv == markdown, integer and accuracy cells exact";
    if (!err.empty()) detail += "; " + err;
    return finish(t, 120.0, err.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
    struct Check {
        int number;
        const char* name;
        std::function<Outcome()> fn;
    };
    const std::vector<Check> checks{
        {1, "gradients", check_gradients},
        {2, "tokenizer golden parity", check_tokenizer_golden},
        {3, "masking statistics", check_masking_stats},
        {4, "subset set algebra", check_set_algebra},
        {5, "deterministic tool runs", check_deterministic_tool},
        {6, "committee voting", check_committee},
        {7, "latency", check_latency},
        {8, "memorization", check_memorization},
        {9, "pre-training gap trend", check_gap_trend},
        {10, "inflated T_M penalty", check_inflated_tm},
        {11, "report round-trip", check_report_roundtrip},
    };

    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    bool all_pass = true;
    for (const Check& c : checks) {
        if (!wanted.empty() && !wanted.count(c.number)) continue;
        Outcome out;
        try {
            out = c.fn();
        } catch (const std::exception& e) {
            out = {false, std::string("unhandled exception: ") + e.what()};
        }
        all_pass = all_pass && out.pass;
        std::printf("%2d %-26s %s  %s\n", c.number, c.name, out.pass ? "PASS" : "FAIL",
                    out.detail.c_str());
        std::fflush(stdout);
    }
    return all_pass ? 0 : 1;
}

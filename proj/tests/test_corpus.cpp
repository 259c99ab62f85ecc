#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tlm/corpus.hpp"

using namespace tlm;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path = "/tmp/tlm_corpus_test_" + name;
    std::ofstream f(path, std::ios::binary);
    f << content;
    return path;
}

Corpus make_corpus(const std::vector<std::vector<int32_t>>& paragraphs) {
    Corpus c;
    for (const auto& toks : paragraphs) {
        Paragraph p;
        p.tokens = toks;
        std::sort(p.tokens.begin(), p.tokens.end());
        c.paragraphs.push_back(std::move(p));
    }
    return c;
}

}  // namespace

TEST_CASE("token set basics") {
    TokenSet ts = TokenSet::from_ids({5, 3, 5, 9, 3});
    REQUIRE(ts.ids == std::vector<int32_t>{3, 5, 9});
    REQUIRE(ts.contains(5));
    REQUIRE_FALSE(ts.contains(4));

    TokenSet freq;
    freq.add_occurrences({1, 2, 2, 7});
    freq.add_occurrences({2});
    freq.rebuild_ids_from_freq();
    REQUIRE(freq.ids == std::vector<int32_t>{1, 2, 7});
    REQUIRE(freq.freq.at(2) == 3);

    // the hash depends on membership only
    TokenSet a = TokenSet::from_ids({1, 2, 3});
    TokenSet b = TokenSet::from_ids({3, 1, 2, 2});
    REQUIRE(a.hash() == b.hash());
    REQUIRE(a.hash() != TokenSet::from_ids({1, 2, 4}).hash());
}

TEST_CASE("instance files parse labels, headers and both delimiters") {
    const std::string path = write_temp(
        "inst.tsv", "label\ttext\n1\tfirst one\n0\tsecond, with comma\n2\tthird\n");
    const auto insts = load_instances(path);
    REQUIRE(insts.size() == 3);
    REQUIRE(insts[0].label == 1);
    REQUIRE(insts[0].text == "first one");
    REQUIRE(insts[1].text == "second, with comma");

    const auto csv = load_instances(write_temp("inst.csv", "0,alpha beta\n1,gamma\n"));
    REQUIRE(csv.size() == 2);
    REQUIRE(csv[1].text == "gamma");

    REQUIRE_THROWS_AS(load_instances(write_temp("bad1.tsv", "0\tok\nnope\tbad label\n")), DataError);
    REQUIRE_THROWS_AS(load_instances(write_temp("bad2.tsv", "-1\tnegative\n")), DataError);
    REQUIRE_THROWS_AS(load_instances("/nonexistent/file.tsv"), DataError);
}

TEST_CASE("classification dataset requires dense labels") {
    const std::string train = write_temp("tr.tsv", "0\ta\n2\tb\n");
    const std::string test = write_temp("te.tsv", "0\tc\n2\td\n");
    REQUIRE_THROWS_AS(load_classification_dataset(train, test), DataError);

    const std::string train2 = write_temp("tr2.tsv", "0\ta\n1\tb\n");
    const std::string test2 = write_temp("te2.tsv", "2\tc\n0\td\n");
    const ClassificationDataset ds = load_classification_dataset(train2, test2);
    REQUIRE(ds.n_labels == 3);
}

TEST_CASE("dataset reduction samples per label and is seed-stable") {
    ClassificationDataset ds;
    ds.n_labels = 2;
    for (int i = 0; i < 20; ++i) ds.train.push_back({"t" + std::to_string(i), i % 2});
    for (int i = 0; i < 10; ++i) ds.test.push_back({"e" + std::to_string(i), i % 2});

    const ClassificationDataset r1 = reduce_classification_dataset(ds, 3, 2, 42);
    const ClassificationDataset r2 = reduce_classification_dataset(ds, 3, 2, 42);
    REQUIRE(r1.train.size() == 6);
    REQUIRE(r1.test.size() == 4);
    for (size_t i = 0; i < r1.train.size(); ++i) REQUIRE(r1.train[i].text == r2.train[i].text);

    size_t label0 = 0;
    for (const auto& inst : r1.train) label0 += inst.label == 0;
    REQUIRE(label0 == 3);

    const ClassificationDataset r3 = reduce_classification_dataset(ds, 3, 2, 43);
    bool any_diff = false;
    for (size_t i = 0; i < r1.train.size(); ++i) any_diff |= r1.train[i].text != r3.train[i].text;
    REQUIRE(any_diff);

    REQUIRE_THROWS_AS(reduce_classification_dataset(ds, 11, 2, 42), DataError);
}

TEST_CASE("custom subsets keep only fully-covered paragraphs") {
    const Corpus corpus = make_corpus({{1, 2, 3}, {2, 4}, {1, 1, 2}, {5}, {}});
    const TokenSet allowed = TokenSet::from_ids({1, 2, 3});
    const CorpusSubset s = build_custom_subset(corpus, allowed);
    REQUIRE(s.indices == std::vector<size_t>{0, 2, 4});  // empty paragraph is trivially covered
    REQUIRE(s.t_w.ids == std::vector<int32_t>{1, 2, 3});
    REQUIRE_FALSE(s.empty_warning);
    REQUIRE(s.provenance.kind == SubsetKind::custom);

    const CorpusSubset none = build_custom_subset(make_corpus({{9}, {8}}), allowed);
    REQUIRE(none.empty_warning);
    REQUIRE(none.w_s() == 0);

    TokenSet empty;
    REQUIRE_THROWS_AS(build_custom_subset(corpus, empty), std::invalid_argument);
}

TEST_CASE("random subsets are valid draws and seed-deterministic") {
    const Corpus corpus = make_corpus(
        {{1}, {2}, {3}, {4}, {5}, {6}, {7}, {8}, {9}, {10}});
    const CorpusSubset a = sample_random_subset(corpus, 4, 7);
    const CorpusSubset b = sample_random_subset(corpus, 4, 7);
    const CorpusSubset c = sample_random_subset(corpus, 4, 8);
    REQUIRE(a.indices == b.indices);
    REQUIRE(a.indices != c.indices);
    REQUIRE(a.w_s() == 4);
    std::set<size_t> uniq(a.indices.begin(), a.indices.end());
    REQUIRE(uniq.size() == 4);
    for (size_t i : a.indices) REQUIRE(i < corpus.size());

    // requesting more than available clamps to the whole corpus
    REQUIRE(sample_random_subset(corpus, 99, 1).w_s() == 10);
}

TEST_CASE("overlap metrics against a hand-checked example") {
    const Corpus corpus = make_corpus({{1, 2}, {3}, {2, 4}});
    CorpusSubset s = sample_random_subset(corpus, 3, 1);
    s.indices = {0, 1};  // T_W = {1,2,3}
    s.t_w = TokenSet::from_ids({1, 2, 3});

    TokenSet tc;
    tc.add_occurrences({2, 2, 2, 5, 5, 6});  // T_C = {2,5,6}, weights 3/2/1
    tc.rebuild_ids_from_freq();

    const OverlapReport r = compute_overlap_metrics(s, tc);
    REQUIRE(r.w_s == 2);
    REQUIRE(r.t_w_size == 3);
    REQUIRE(r.t_c_size == 3);
    REQUIRE(r.t_m == 2);
    REQUIRE(r.missing == std::vector<int32_t>{5, 6});
    REQUIRE(r.weighted_overlap == Catch::Approx(0.5).epsilon(1e-12));

    TokenSet empty_tc;
    empty_tc.has_freq = true;
    REQUIRE(compute_overlap_metrics(s, empty_tc).weighted_overlap == 1.0);
}

TEST_CASE("inflated subsets exclude rare task tokens and admit fillers") {
    // corpus frequencies: 1 appears 3x, 2 appears 2x, 3 once, 7 once, 8 4x
    const Corpus corpus = make_corpus({{1, 1, 2}, {1, 2, 3}, {7, 8, 8}, {8, 8}});
    TokenSet tc;
    tc.add_occurrences({1, 2, 3});
    tc.rebuild_ids_from_freq();

    // exclude ceil(0.34 * 3) = 2 rarest task tokens: 3 (freq 1) and 2 (freq 2)
    const CorpusSubset s = build_inflated_tm_subset(corpus, tc, 0.34, kUnlimitedFiller, 10);
    REQUIRE(s.provenance.kind == SubsetKind::inflated);
    // allowed = {1} from T_C plus all of {0,4,5,6,7,8,9}; paragraphs 2 and 3 qualify
    REQUIRE(s.indices == std::vector<size_t>{2, 3});

    // zero exclusion keeps every paragraph reachable
    const CorpusSubset all = build_inflated_tm_subset(corpus, tc, 0.0, kUnlimitedFiller, 10);
    REQUIRE(all.indices == std::vector<size_t>{0, 1, 2, 3});

    // a filler budget of 1 admits only the most corpus-frequent non-task token (8)
    const CorpusSubset tight = build_inflated_tm_subset(corpus, tc, 1.0, 1, 10);
    REQUIRE(tight.indices == std::vector<size_t>{3});

    REQUIRE_THROWS_AS(build_inflated_tm_subset(corpus, tc, 1.5), std::invalid_argument);
}

TEST_CASE("subset manifests round-trip exactly") {
    const Corpus corpus = make_corpus({{1, 2}, {3}, {2, 4}, {5, 6}, {1}});
    const CorpusSubset s = sample_random_subset(corpus, 3, 99);
    const std::string path = write_temp("subset.manifest", subset_manifest_text(s));

    const CorpusSubset loaded = load_subset_manifest(path, corpus);
    REQUIRE(loaded.indices == s.indices);
    REQUIRE(loaded.t_w.ids == s.t_w.ids);
    REQUIRE(loaded.provenance.kind == s.provenance.kind);
    REQUIRE(loaded.provenance.seed == 99);
    REQUIRE(subset_manifest_hash(loaded) == subset_manifest_hash(s));

    TokenSet allowed;
    allowed.add_occurrences({1, 2, 3, 4});
    allowed.rebuild_ids_from_freq();
    const CorpusSubset inflated = build_inflated_tm_subset(corpus, allowed, 0.5, 2, 8);
    const std::string path2 = write_temp("subset2.manifest", subset_manifest_text(inflated));
    const CorpusSubset loaded2 = load_subset_manifest(path2, corpus);
    REQUIRE(loaded2.provenance.exclusion_fraction == 0.5);
    REQUIRE(loaded2.provenance.filler_budget == 2);
    REQUIRE(loaded2.provenance.allowed_hash == inflated.provenance.allowed_hash);
    REQUIRE(loaded2.indices == inflated.indices);

    REQUIRE_THROWS_AS(load_subset_manifest(write_temp("trunc.manifest", "kind random\n"), corpus),
                      DataError);
    REQUIRE_THROWS_AS(
        load_subset_manifest(
            write_temp("oob.manifest",
                       "kind custom\nallowed_hash 0\nseed 0\nexclusion_fraction 0\n"
                       "filler_budget 0\nw_s 1\n12\n"),
            corpus),
        DataError);
}

// ---------------------------------------------------------------------------
// Brute-force parity: independent std::set implementations of every piece of
// set algebra, run against randomly generated corpora.
// ---------------------------------------------------------------------------

namespace {

struct BruteCorpus {
    std::vector<std::vector<int32_t>> paragraphs;  // unsorted raw tokens
    std::map<int32_t, uint64_t> tc_freq;
};

BruteCorpus random_case(std::mt19937_64& gen) {
    BruteCorpus bc;
    std::uniform_int_distribution<size_t> n_paras(1, 1000);
    std::uniform_int_distribution<size_t> n_toks(0, 40);
    std::uniform_int_distribution<int32_t> token(0, 399);
    const size_t count = n_paras(gen);
    bc.paragraphs.resize(count);
    for (auto& p : bc.paragraphs) {
        const size_t len = n_toks(gen);
        for (size_t i = 0; i < len; ++i) p.push_back(token(gen));
    }
    std::uniform_int_distribution<size_t> tc_size(1, 60);
    std::uniform_int_distribution<uint64_t> weight(1, 9);
    const size_t n_tc = tc_size(gen);
    for (size_t i = 0; i < n_tc; ++i) bc.tc_freq[token(gen)] += weight(gen);
    return bc;
}

std::set<int32_t> brute_union(const BruteCorpus& bc, const std::vector<size_t>& indices) {
    std::set<int32_t> u;
    for (size_t i : indices) u.insert(bc.paragraphs[i].begin(), bc.paragraphs[i].end());
    return u;
}

std::vector<size_t> brute_filter(const BruteCorpus& bc, const std::set<int32_t>& allowed) {
    std::vector<size_t> out;
    for (size_t i = 0; i < bc.paragraphs.size(); ++i) {
        bool ok = true;
        for (int32_t t : bc.paragraphs[i])
            if (!allowed.count(t)) {
                ok = false;
                break;
            }
        if (ok) out.push_back(i);
    }
    return out;
}

}  // namespace

TEST_CASE("set algebra matches brute force on 100 random corpora") {
    std::mt19937_64 gen(20240817);
    const auto start = std::chrono::steady_clock::now();

    for (int trial = 0; trial < 100; ++trial) {
        const BruteCorpus bc = random_case(gen);
        const Corpus corpus = make_corpus(bc.paragraphs);

        TokenSet tc;
        tc.freq = bc.tc_freq;
        tc.has_freq = true;
        tc.rebuild_ids_from_freq();

        // --- custom subset: filter + union + overlap ---
        std::set<int32_t> allowed_brute(tc.ids.begin(), tc.ids.end());
        // widen the allowed set with some corpus tokens so matches are likely
        for (size_t i = 0; i < bc.paragraphs.size(); i += 3)
            allowed_brute.insert(bc.paragraphs[i].begin(), bc.paragraphs[i].end());
        TokenSet allowed = TokenSet::from_ids(
            std::vector<int32_t>(allowed_brute.begin(), allowed_brute.end()));

        const CorpusSubset s = build_custom_subset(corpus, allowed);
        const std::vector<size_t> want_idx = brute_filter(bc, allowed_brute);
        REQUIRE(s.indices == want_idx);

        const std::set<int32_t> want_tw = brute_union(bc, want_idx);
        REQUIRE(s.t_w.ids == std::vector<int32_t>(want_tw.begin(), want_tw.end()));

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
        REQUIRE(r.t_m == want_tm);
        REQUIRE(r.t_w_size == want_tw.size());
        REQUIRE(r.t_c_size == bc.tc_freq.size());
        const double want_overlap =
            total == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(total);
        REQUIRE(r.weighted_overlap == Catch::Approx(want_overlap).margin(1e-12));

        // --- random subset: membership and union ---
        const size_t k = 1 + trial % 50;
        const CorpusSubset rs = sample_random_subset(corpus, k, 1000 + trial);
        REQUIRE(rs.w_s() == std::min(k, corpus.size()));
        std::set<size_t> uniq(rs.indices.begin(), rs.indices.end());
        REQUIRE(uniq.size() == rs.indices.size());
        const std::set<int32_t> want_rw = brute_union(bc, rs.indices);
        REQUIRE(rs.t_w.ids == std::vector<int32_t>(want_rw.begin(), want_rw.end()));

        // --- inflated subset: independent reimplementation of the recipe ---
        const double frac = (trial % 5) * 0.25;
        const uint64_t budget = trial % 3 == 0 ? kUnlimitedFiller : 50 + trial;

        std::map<int32_t, uint64_t> cfreq;
        for (const auto& p : bc.paragraphs)
            for (int32_t t : p) ++cfreq[t];
        const auto freq_of = [&](int32_t id) {
            auto it = cfreq.find(id);
            return it == cfreq.end() ? uint64_t(0) : it->second;
        };
        std::vector<int32_t> by_rarity(tc.ids.begin(), tc.ids.end());
        std::sort(by_rarity.begin(), by_rarity.end(), [&](int32_t a, int32_t b) {
            return freq_of(a) != freq_of(b) ? freq_of(a) < freq_of(b) : a < b;
        });
        const size_t n_excl = static_cast<size_t>(
            std::ceil(frac * static_cast<double>(tc.ids.size())));
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
        REQUIRE(infl.indices == brute_filter(bc, allowed_infl));
        const std::set<int32_t> want_iw = brute_union(bc, infl.indices);
        REQUIRE(infl.t_w.ids == std::vector<int32_t>(want_iw.begin(), want_iw.end()));
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    REQUIRE(secs < 30.0);
}

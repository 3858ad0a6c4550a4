#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "diffshield/checkpoint.hpp"
#include "diffshield/dataset.hpp"
#include "diffshield/model.hpp"
#include "diffshield/train.hpp"

using namespace diffshield;

namespace {

EncoderClassifier<double> tiny_model(std::uint64_t seed, int vocab = 12) {
    EncoderClassifier<double> m;
    m.cfg.vocab = vocab;
    m.cfg.width = 8;
    m.cfg.layers = 2;
    m.cfg.heads = 2;
    m.cfg.ffn_mult = 2;
    m.cfg.max_len = 6;
    m.cfg.classes = 3;
    m.cfg.dropout = 0.0;
    m.cfg.init_std = 0.1;
    Rng rng(seed);
    m.init(rng);
    return m;
}

TokenSequence seq_of(std::vector<int> ids, int valid, int max_len) {
    TokenSequence s;
    s.ids = std::move(ids);
    s.ids.resize(static_cast<std::size_t>(max_len), Vocab::kPad);
    s.valid_len = valid;
    s.mask.assign(static_cast<std::size_t>(max_len), 0);
    for (int i = 0; i < valid; ++i) s.mask[static_cast<std::size_t>(i)] = 1;
    return s;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST(model, logits_shape_and_determinism) {
    auto m = tiny_model(3);
    auto seq = seq_of({2, 5, 7}, 3, 6);
    ModelFwd<double> fw1, fw2;
    forward_logits<double>(m, seq, nullptr, false, nullptr, fw1);
    forward_logits<double>(m, seq, nullptr, false, nullptr, fw2);
    ASSERT_EQ(fw1.logits.shape, (std::vector<int>{1, 3}));
    EXPECT_EQ(fw1.logits.data, fw2.logits.data);
    auto m2 = tiny_model(3);
    ModelFwd<double> fw3;
    forward_logits<double>(m2, seq, nullptr, false, nullptr, fw3);
    EXPECT_EQ(fw1.logits.data, fw3.logits.data);  // same init seed, same params
}

TEST(model, padding_token_ids_do_not_affect_logits) {
    auto m = tiny_model(4);
    auto a = seq_of({2, 5, 7}, 3, 6);
    auto b = a;
    b.ids[3] = 9;  // junk beyond valid_len, mask still zero
    b.ids[5] = 4;
    ModelFwd<double> fa, fb;
    forward_logits<double>(m, a, nullptr, false, nullptr, fa);
    forward_logits<double>(m, b, nullptr, false, nullptr, fb);
    EXPECT_EQ(fa.logits.data, fb.logits.data);
}

TEST(model, encode_zeroes_padding_rows) {
    auto m = tiny_model(5);
    auto seq = seq_of({3, 8}, 2, 6);
    auto h = encode(m, seq);
    ASSERT_EQ(h.shape, (std::vector<int>{6, 8}));
    for (int i = 2; i < 6; ++i)
        for (int j = 0; j < 8; ++j) EXPECT_EQ(h.row(i)[j], 0.0);
    bool nonzero = false;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 8; ++j)
            if (h.row(i)[j] != 0.0) nonzero = true;
    EXPECT_TRUE(nonzero);
}

TEST(model, pooled_classification_uses_mean_of_valid_rows) {
    auto m = tiny_model(6);
    auto seq = seq_of({2, 5, 7}, 3, 6);
    auto h = encode(m, seq);
    TensorT<double> hbar({1, 8});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 8; ++j) hbar.data[static_cast<std::size_t>(j)] += h.row(i)[j] / 3.0;
    TensorT<double> logits;
    linear_forward(hbar, m.head_w, m.head_b, logits);
    ModelFwd<double> fw;
    forward_logits<double>(m, seq, nullptr, false, nullptr, fw);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(fw.logits.data[static_cast<std::size_t>(c)], logits.data[static_cast<std::size_t>(c)], 1e-12);
}

TEST(model, classify_hidden_matches_forward_when_hidden_is_clean) {
    auto m = tiny_model(7);
    auto seq = seq_of({2, 5, 7, 9}, 4, 6);
    auto h = encode(m, seq);
    auto probs = classify_hidden(m, h, seq.mask);
    ModelFwd<double> fw;
    forward_logits<double>(m, seq, nullptr, false, nullptr, fw);
    TensorT<double> ref_probs;
    softmax_rows(fw.logits, ref_probs);
    ASSERT_EQ(probs.size(), 3u);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(probs[static_cast<std::size_t>(c)], ref_probs.data[static_cast<std::size_t>(c)], 1e-12);
    EXPECT_EQ(argmax(probs), argmax(std::vector<double>(ref_probs.data.begin(), ref_probs.data.end())));
}

TEST(checkpoint, model_round_trip_preserves_everything) {
    TempDir dir("diffshield_ckpt_model");
    auto m = tiny_model(8);
    Vocab vocab = Vocab::build({"ant", "bee", "cat", "dog", "elk", "fox", "gnu", "hen", "ibis", "jay"});
    ASSERT_EQ(vocab.size(), m.cfg.vocab);
    save_model(dir.str(), m, vocab);
    auto [back, vback] = load_model<double>(dir.str());
    EXPECT_EQ(vback.id_to_token, vocab.id_to_token);
    EXPECT_EQ(back.cfg.width, m.cfg.width);
    EXPECT_EQ(back.cfg.dropout, m.cfg.dropout);
    auto pa = m.parameters();
    auto pb = back.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i]->shape, pb[i]->shape);
        EXPECT_EQ(pa[i]->data, pb[i]->data);
    }
    auto seq = seq_of({2, 5}, 2, 6);
    ModelFwd<double> f1, f2;
    forward_logits<double>(m, seq, nullptr, false, nullptr, f1);
    forward_logits<double>(back, seq, nullptr, false, nullptr, f2);
    EXPECT_EQ(f1.logits.data, f2.logits.data);
}

TEST(checkpoint, detects_weight_corruption) {
    TempDir dir("diffshield_ckpt_corrupt");
    auto m = tiny_model(9);
    Vocab vocab = Vocab::build({"ant", "bee", "cat", "dog", "elk", "fox", "gnu", "hen", "ibis", "jay"});
    save_model(dir.str(), m, vocab);
    {
        std::fstream f(dir.path / "weights.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(16);
        char junk = 0x5a;
        f.write(&junk, 1);
    }
    EXPECT_THROW(load_model<double>(dir.str()), std::runtime_error);
}

TEST(checkpoint, hash_is_stable_across_saves) {
    TempDir a("diffshield_ckpt_hash_a"), b("diffshield_ckpt_hash_b");
    auto m = tiny_model(10);
    Vocab vocab = Vocab::build({"ant", "bee", "cat", "dog", "elk", "fox", "gnu", "hen", "ibis", "jay"});
    save_model(a.str(), m, vocab);
    save_model(b.str(), m, vocab);
    EXPECT_EQ(hash_file(a.str() + "/weights.bin"), hash_file(b.str() + "/weights.bin"));
}

TEST(checkpoint, denoiser_round_trip_with_schedule) {
    TempDir dir("diffshield_ckpt_den");
    DiffusionDenoiser<double> den;
    den.cfg.width = 8;
    den.cfg.heads = 2;
    den.cfg.ffn_mult = 2;
    den.cfg.max_len = 6;
    den.cfg.dropout = 0.0;
    den.cfg.init_std = 0.1;
    Rng rng(11);
    den.init(rng);
    auto sched = linear_schedule(30, 1e-4, 0.02);
    save_denoiser(dir.str(), den, sched, 1e-4, 0.02);
    auto [back, spec] = load_denoiser<double>(dir.str());
    EXPECT_EQ(spec.T, 30);
    EXPECT_DOUBLE_EQ(spec.beta_start, 1e-4);
    EXPECT_DOUBLE_EQ(spec.beta_end, 0.02);
    auto pa = den.parameters();
    auto pb = back.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->data, pb[i]->data);
}

TEST(checkpoint, rejects_dtype_mismatch) {
    TempDir dir("diffshield_ckpt_dtype");
    auto m = tiny_model(12);
    Vocab vocab = Vocab::build({"ant", "bee", "cat", "dog", "elk", "fox", "gnu", "hen", "ibis", "jay"});
    save_model(dir.str(), m, vocab);
    EXPECT_THROW(load_model<float>(dir.str()), std::runtime_error);
}

TEST(training, clean_training_learns_tiny_task) {
    GeneratorConfig gc;
    gc.train_n = 160;
    gc.valid_n = 40;
    gc.test_n = 8;
    auto corpus = generate_corpus(gc, 21);
    Vocab vocab = Vocab::build(corpus.vocab_words);
    EncoderClassifier<double> m;
    m.cfg.vocab = vocab.size();
    m.cfg.width = 16;
    m.cfg.layers = 1;
    m.cfg.heads = 2;
    m.cfg.ffn_mult = 2;
    m.cfg.max_len = 16;
    m.cfg.classes = 4;
    m.cfg.dropout = 0.0;
    m.cfg.init_std = 0.05;
    Rng init_rng(1);
    m.init(init_rng);
    auto seqs = tokenize_all(corpus.train, vocab, m.cfg.max_len);
    std::vector<int> labels;
    for (const auto& e : corpus.train) labels.push_back(e.label);
    TrainSettings ts;
    ts.epochs = 6;
    ts.batch = 16;
    ts.lr = 5e-3;
    Rng train_rng(2);
    auto losses = train_clean(m, seqs, labels, ts, train_rng);
    ASSERT_EQ(losses.size(), 6u);
    EXPECT_LT(losses.back(), losses.front() * 0.5);
    auto vseqs = tokenize_all(corpus.valid, vocab, m.cfg.max_len);
    std::vector<int> vlabels;
    for (const auto& e : corpus.valid) vlabels.push_back(e.label);
    EXPECT_GT(accuracy(m, vseqs, vlabels), 0.8);
}

TEST(training, adversarial_training_learns_and_differs_from_clean) {
    GeneratorConfig gc;
    gc.train_n = 200;
    gc.valid_n = 40;
    gc.test_n = 8;
    auto corpus = generate_corpus(gc, 22);
    Vocab vocab = Vocab::build(corpus.vocab_words);
    auto make = [&] {
        EncoderClassifier<double> m;
        m.cfg.vocab = vocab.size();
        m.cfg.width = 16;
        m.cfg.layers = 1;
        m.cfg.heads = 2;
        m.cfg.ffn_mult = 2;
        m.cfg.max_len = 16;
        m.cfg.classes = 4;
        m.cfg.dropout = 0.0;
        m.cfg.init_std = 0.05;
        Rng r(1);
        m.init(r);
        return m;
    };
    auto seqs = tokenize_all(corpus.train, vocab, 16);
    std::vector<int> labels;
    for (const auto& e : corpus.train) labels.push_back(e.label);
    TrainSettings ts;
    ts.epochs = 8;
    ts.batch = 16;
    ts.lr = 5e-3;
    AdvSettings adv;
    adv.inner_steps = 2;
    adv.step_size = 0.02;
    adv.norm_bound = 0.2;

    auto m_clean = make();
    auto m_adv = make();
    Rng r1(2), r2(2);
    train_clean(m_clean, seqs, labels, ts, r1);
    auto losses = train_adversarial(m_adv, seqs, labels, ts, adv, r2);
    EXPECT_LT(losses.back(), losses.front());
    EXPECT_NE(m_clean.head_w.data, m_adv.head_w.data);
    auto vseqs = tokenize_all(corpus.valid, vocab, 16);
    std::vector<int> vlabels;
    for (const auto& e : corpus.valid) vlabels.push_back(e.label);
    EXPECT_GT(accuracy(m_adv, vseqs, vlabels), 0.7);
}

TEST(training, denoiser_training_reduces_loss) {
    Rng rng(31);
    const int n = 48, L = 6, D = 8;
    std::vector<TensorT<double>> hidden;
    std::vector<Mask> masks;
    for (int i = 0; i < n; ++i) {
        TensorT<double> h({L, D});
        rng.fill_gaussian(h);
        Mask mk(L, 1);
        int valid = 3 + static_cast<int>(rng.uniform_int(4));
        for (int r = valid; r < L; ++r) {
            mk[static_cast<std::size_t>(r)] = 0;
            for (int j = 0; j < D; ++j) h.row(r)[j] = 0.0;
        }
        hidden.push_back(std::move(h));
        masks.push_back(std::move(mk));
    }
    DiffusionDenoiser<double> den;
    den.cfg.width = D;
    den.cfg.heads = 2;
    den.cfg.ffn_mult = 2;
    den.cfg.max_len = L;
    den.cfg.dropout = 0.0;
    den.cfg.init_std = 0.05;
    Rng init_rng(32);
    den.init(init_rng);
    auto sched = linear_schedule(30, 1e-4, 0.02);

    // fixed held-out noise-prediction triples, immune to epoch-mean sampling noise
    Rng eval_rng(99);
    std::vector<std::tuple<std::size_t, int, TensorT<double>>> triples;
    for (int i = 0; i < 32; ++i) {
        std::size_t idx = eval_rng.uniform_int(hidden.size());
        int t = 1 + static_cast<int>(eval_rng.uniform_int(30));
        TensorT<double> eps(hidden[idx].shape);
        eval_rng.fill_gaussian(eps);
        zero_pad_rows(eps, masks[idx]);
        triples.emplace_back(idx, t, std::move(eps));
    }
    auto eval_loss = [&] {
        double total = 0.0;
        DenFwd<double> fw;
        for (auto& [idx, t, eps] : triples) {
            auto h_t = add_noise(hidden[idx], t, eps, sched);
            zero_pad_rows(h_t, masks[idx]);
            den.predict_noise(h_t, t, masks[idx], false, nullptr, fw);
            total += mse_masked_forward(fw.eps_hat, eps, masks[idx]);
        }
        return total / static_cast<double>(triples.size());
    };

    double before = eval_loss();
    TrainSettings ts;
    ts.epochs = 8;
    ts.batch = 16;
    ts.lr = 3e-3;
    Rng train_rng(33);
    auto losses = train_denoiser(den, hidden, masks, sched, ts, train_rng);
    ASSERT_EQ(losses.size(), 8u);
    double after = eval_loss();
    EXPECT_LT(after, before);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "redcell/digest.hpp"
#include "redcell/npy.hpp"
#include "redcell/png_io.hpp"
#include "redcell/rng.hpp"
#include "redcell/toy_text.hpp"
#include "redcell/toy_vision.hpp"
#include "support.hpp"

using namespace redcell;
namespace rt = redcell::testing;

namespace {

std::shared_ptr<BagOfTokensModerator> make_bag(double bias = 0.0, double threshold = 0.0) {
    auto tok = surrogate_tokenizer();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(tok->vocab_size());
    for (int i = 0; i < 64; ++i) {
        w[i] = 1.0; // risk words
        w[64 + i] = -1.0; // calm words
    }
    return std::make_shared<BagOfTokensModerator>("bag", tok, w, bias, threshold);
}

double relaxed_fd(const GradientModeratorHandle& m, const std::vector<int>& prefix,
                  const Eigen::MatrixXd& selection, Eigen::Index r, Eigen::Index c,
                  double h = 1e-6) {
    Eigen::MatrixXd probe = selection;
    probe(r, c) = selection(r, c) + h;
    double up = m.relaxed_score(prefix, probe);
    probe(r, c) = selection(r, c) - h;
    double down = m.relaxed_score(prefix, probe);
    return (up - down) / (2.0 * h);
}

void check_selection_gradient(const GradientModeratorHandle& m, const std::vector<int>& prefix,
                              const Eigen::MatrixXd& selection) {
    Eigen::MatrixXd grad = m.grad_wrt_selection(prefix, selection);
    REQUIRE(grad.rows() == selection.rows());
    REQUIRE(grad.cols() == selection.cols());
    CHECK(grad.allFinite());
    Rng rng(99);
    for (int probe = 0; probe < 24; ++probe) {
        auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(grad.rows())));
        auto c = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(grad.cols())));
        double fd = relaxed_fd(m, prefix, selection, r, c);
        double scale = std::max({std::abs(fd), std::abs(grad(r, c)), 1e-8});
        CHECK(std::abs(grad(r, c) - fd) / scale <= 1e-4);
    }
}

} // namespace

TEST_CASE("rng is deterministic and seed-separable") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next() == b.next());
    }
    CHECK(derive_seed(1, "stage1") != derive_seed(1, "stage2"));
    CHECK(derive_seed(1, "stage1", std::uint64_t{0}) != derive_seed(1, "stage1", std::uint64_t{1}));
    CHECK(derive_seed(1, "x") != derive_seed(2, "x"));

    Rng u(7);
    for (int i = 0; i < 1000; ++i) {
        auto v = u.below(10);
        CHECK(v < 10);
        double d = u.uniform01();
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
    }
}

TEST_CASE("tokenizer greedy longest match and round trips") {
    auto tok = surrogate_tokenizer();
    CHECK(tok->vocab_size() >= 256);

    SUBCASE("multi-character tokens win over letters") {
        auto ids = tok->encode(" kitty");
        REQUIRE(ids.size() == 1);
        CHECK(tok->token(ids[0]) == " kitty");
    }
    SUBCASE("decode is concatenation") {
        auto ids = tok->encode(" risk00 calm01ab");
        CHECK(tok->decode(ids) == " risk00 calm01ab");
    }
    SUBCASE("unmatched bytes are skipped") {
        auto ids = tok->encode("a?b");
        REQUIRE(ids.size() == 2);
        CHECK(tok->decode(ids) == "ab");
    }
    SUBCASE("round trip drift is detectable") {
        int kit = tok->find(" kit");
        int t = tok->find("t");
        int y = tok->find("y");
        REQUIRE(kit >= 0);
        REQUIRE(t >= 0);
        REQUIRE(y >= 0);
        std::vector<int> drifting = {kit, t, y}; // decodes to " kitty"
        CHECK(tok->decode(drifting) == " kitty");
        CHECK_FALSE(tok->round_trips(drifting));
        CHECK(tok->round_trips(tok->encode(" kitty")));
    }
}

TEST_CASE("moderator score and verdict contract") {
    auto bag = make_bag();

    SUBCASE("no flagged tokens scores zero") {
        CHECK(bag->score_text(" word000 word001") == 0.0);
    }
    SUBCASE("single flagged token scores its weight") {
        CHECK(bag->score_text(" risk03") == 1.0);
    }
    SUBCASE("scores are bit-stable") {
        std::string text = " risk00 calm05 word010";
        CHECK(bag->score_text(text) == bag->score_text(text));
    }
    SUBCASE("verdict is unsafe strictly above the threshold") {
        CHECK(bag->verdict(" risk00") == Verdict::unsafe);   // score 1 > 0
        CHECK(bag->verdict(" word000") == Verdict::safe);    // score 0, not > 0
        CHECK(bag->verdict(" calm00") == Verdict::safe);     // score -1
        auto shifted = make_bag(0.0, 1.0);
        CHECK(shifted->verdict(" risk00") == Verdict::safe); // score 1, not > 1
        CHECK(shifted->verdict(" risk00 risk01") == Verdict::unsafe);
    }
    SUBCASE("oversized input is rejected") {
        auto tok = surrogate_tokenizer();
        class Tiny final : public ModeratorHandle {
          public:
            Tiny() : ModeratorHandle("tiny", 1, 0.5, true, 8) {}

          protected:
            double score_impl(const std::string&) const override { return 0.0; }
        };
        Tiny tiny;
        CHECK(tiny.score_text("12345678") == 0.0);
        CHECK_THROWS_AS(tiny.score_text("123456789"), InputTooLong);
    }
}

TEST_CASE("gradient moderators agree with finite differences") {
    auto tok = surrogate_tokenizer();
    auto bag = make_bag(0.25);

    std::vector<int> prefix = tok->encode(" risk00 word003");
    Eigen::MatrixXd selection = Eigen::MatrixXd::Zero(3, tok->vocab_size());
    selection(0, 0) = 1.0;
    selection(1, 70) = 1.0;
    selection(2, 130) = 1.0;

    SUBCASE("bag gradient rows all equal the weight vector") {
        Eigen::MatrixXd grad = bag->grad_wrt_selection(prefix, selection);
        for (Eigen::Index i = 0; i < grad.rows(); ++i) {
            CHECK((grad.row(i).transpose() - bag->weights()).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    SUBCASE("zero weights give a zero gradient") {
        Eigen::VectorXd zero = Eigen::VectorXd::Zero(tok->vocab_size());
        BagOfTokensModerator flat("flat", tok, zero, 0.0);
        CHECK(flat.grad_wrt_selection(prefix, selection).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("bag gradient matches finite differences") {
        check_selection_gradient(*bag, prefix, selection);
    }
    SUBCASE("logistic gradient matches finite differences") {
        Rng rng(5);
        Eigen::VectorXd w(tok->vocab_size());
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w[i] = 0.3 * rng.normal();
        }
        LogisticTextModerator logit("logit", tok, w, -0.1);
        check_selection_gradient(logit, prefix, selection);
    }
    SUBCASE("relaxed surface coincides with text scoring on one-hot rows") {
        std::string decoded = tok->decode(prefix) + tok->decode({0, 70, 130});
        CHECK(bag->relaxed_score(prefix, selection) == doctest::Approx(bag->score_text(decoded)).epsilon(1e-12));
    }
    SUBCASE("selection with wrong column count is rejected") {
        Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 7);
        CHECK_THROWS_AS(bag->grad_wrt_selection(prefix, bad), ShapeMismatch);
        CHECK_THROWS_AS(bag->relaxed_score(prefix, bad), ShapeMismatch);
    }
}

TEST_CASE("keyword judge scores by substring only") {
    KeywordJudgeModerator judge("judge", {"risk01", "forbidden"});
    CHECK(judge.score_text("contains risk01 here") == 1.0);
    CHECK(judge.score_text("benign") == 0.0);
    CHECK(judge.verdict("forbidden") == Verdict::unsafe);
    CHECK(judge.verdict("for bidden") == Verdict::safe);
    CHECK(judge.score_text("xx forbidden yy appended noise tokens") == 1.0);
}

TEST_CASE("fitted surrogate moderator separates the synthetic corpus") {
    auto tok = surrogate_tokenizer();
    auto corpus = synthetic_moderation_corpus(*tok, 400, 11);
    REQUIRE(corpus.size() == 400);

    FitConfig fit;
    fit.seed = 3;
    auto model = fit_logistic_moderator("fitted", tok, corpus, fit);

    auto held_out = synthetic_moderation_corpus(*tok, 200, 77);
    int correct = 0;
    for (const auto& example : held_out) {
        bool flagged = model->verdict(example.text) == Verdict::unsafe;
        correct += flagged == example.unsafe ? 1 : 0;
    }
    CHECK(correct >= 180); // 90% held-out accuracy

    auto again = fit_logistic_moderator("fitted2", tok, corpus, fit);
    CHECK((again->weights() - model->weights()).cwiseAbs().maxCoeff() == 0.0);

    auto risky = synthetic_risky_prompts(*tok, 10, 5);
    REQUIRE(risky.size() == 10);
    int unsafe = 0;
    for (const auto& prompt : risky) {
        unsafe += model->verdict(prompt) == Verdict::unsafe ? 1 : 0;
    }
    CHECK(unsafe >= 9);
}

TEST_CASE("encoders validate input and embed deterministically") {
    IdentityEncoder identity("ident", 4, 4, 4);

    SUBCASE("zero image embeds to the zero matrix") {
        Eigen::MatrixXd e = identity.embed_image(Image::Zero(4, 4));
        CHECK(e.rows() == 4);
        CHECK(e.cols() == 4);
        CHECK(e.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("same image twice gives identical embeddings") {
        Image img = seeded_noise_image(4, 9);
        Eigen::MatrixXd a = identity.embed_image(img);
        Eigen::MatrixXd b = identity.embed_image(img);
        CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("resolution and range are enforced") {
        CHECK_THROWS_AS(identity.embed_image(Image::Zero(5, 5)), ResolutionMismatch);
        Image hot = Image::Constant(4, 4, 1.5);
        CHECK_THROWS_AS(identity.embed_image(hot), PixelRangeViolation);
        Image cold = Image::Constant(4, 4, -0.5);
        CHECK_THROWS_AS(identity.embed_image(cold), PixelRangeViolation);
    }
    SUBCASE("prompt embedding has one row per token") {
        Eigen::MatrixXd rows = identity.embed_prompt("alpha beta gamma");
        CHECK(rows.rows() == 3);
        CHECK(rows.cols() == identity.embedding_dim());
        CHECK_THROWS_AS(identity.embed_prompt("   "), EmptyTarget);
        Eigen::MatrixXd again = identity.embed_prompt("alpha beta gamma");
        CHECK((rows - again).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("encoder image gradients match finite differences") {
    Rng rng(21);
    auto random_image = [&rng](int res) {
        Image img(res, res);
        for (Eigen::Index r = 0; r < res; ++r) {
            for (Eigen::Index c = 0; c < res; ++c) {
                img(r, c) = 0.2 + 0.6 * rng.uniform01();
            }
        }
        return img;
    };
    auto check_encoder = [&](const EncoderHandle& enc) {
        REQUIRE(enc.differentiable());
        Image img = random_image(enc.input_resolution());
        Eigen::MatrixXd out_grad(enc.embedding_slot_count(), enc.embedding_dim());
        for (Eigen::Index r = 0; r < out_grad.rows(); ++r) {
            for (Eigen::Index c = 0; c < out_grad.cols(); ++c) {
                out_grad(r, c) = rng.normal();
            }
        }
        Image analytic = enc.image_gradient(img, out_grad);
        Image numeric = rt::finite_difference_gradient(
            [&](const Image& x) { return (enc.embed_image(x).array() * out_grad.array()).sum(); },
            img);
        double denom = std::max(numeric.cwiseAbs().maxCoeff(), 1e-8);
        CHECK((analytic - numeric).cwiseAbs().maxCoeff() / denom <= 1e-4);
    };

    check_encoder(IdentityEncoder("i", 4, 4, 4));
    check_encoder(PatchMeanEncoder("p", 8, 2, 4, 4));
    LinearEncoderConfig config;
    config.resolution = 6;
    config.slots = 4;
    config.dim = 3;
    check_encoder(LinearToyEncoder("l", config));

    SUBCASE("non-differentiable default refuses gradients") {
        class Opaque final : public EncoderHandle {
          public:
            Opaque() : EncoderHandle("opaque", 2, 2, 2, {}) {}
            Eigen::MatrixXd embed_prompt(const std::string&) const override {
                return Eigen::MatrixXd::Zero(1, 2);
            }

          protected:
            Eigen::MatrixXd embed_image_impl(const Image&) const override {
                return Eigen::MatrixXd::Zero(2, 2);
            }
        };
        Opaque enc;
        CHECK_FALSE(enc.differentiable());
        CHECK_THROWS_AS(enc.image_gradient(Image::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)),
                        NotDifferentiable);
    }
}

TEST_CASE("sibling encoders share structure, independent ones do not") {
    LinearEncoderConfig base;
    base.resolution = 8;
    base.slots = 4;
    base.dim = 4;
    base.backbone_seed = 10;
    base.pathway_seed = 20;
    LinearToyEncoder source("src", base);

    LinearEncoderConfig sibling = base;
    sibling.head_noise_scale = 0.05;
    sibling.head_noise_seed = 1;
    LinearToyEncoder sib("sib", sibling);

    LinearEncoderConfig stranger;
    stranger.resolution = 8;
    stranger.slots = 4;
    stranger.dim = 4;
    stranger.backbone_seed = 900;
    stranger.head_seed = 901;
    stranger.pathway_seed = 902;
    LinearToyEncoder other("other", stranger);

    Image img = seeded_noise_image(8, 33);
    Eigen::MatrixXd es = source.embed_image(img);
    Eigen::MatrixXd eb = sib.embed_image(img);
    Eigen::MatrixXd eo = other.embed_image(img);
    double sib_gap = (es - eb).norm() / es.norm();
    double other_gap = (es - eo).norm() / es.norm();
    CHECK(sib_gap < 0.2);
    CHECK(other_gap > sib_gap);
}

TEST_CASE("npy round trip is exact and byte stable") {
    rt::TempDir tmp;
    Image m(3, 5);
    Rng rng(17);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = rng.normal();
        }
    }
    auto path_a = tmp.path() / "a.npy";
    auto path_b = tmp.path() / "b.npy";
    save_npy(path_a, m);
    save_npy(path_b, m);
    CHECK(sha256_hex_file(path_a) == sha256_hex_file(path_b));

    Eigen::MatrixXd back = load_npy(path_a);
    REQUIRE(back.rows() == m.rows());
    REQUIRE(back.cols() == m.cols());
    CHECK((back - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("png round trip matches the quantization model") {
    rt::TempDir tmp;
    Image img = seeded_noise_image(9, 4);
    auto path = tmp.path() / "img.png";
    write_gray8_png(path, img);
    Image back = read_gray8_png(path);
    REQUIRE(back.rows() == 9);
    CHECK((back - quantize_gray8(img)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back - img).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);

    auto path2 = tmp.path() / "img2.png";
    write_gray8_png(path2, img);
    CHECK(sha256_hex_file(path) == sha256_hex_file(path2));
}

TEST_CASE("sha256 agrees with the reference vector") {
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(std::string("")) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

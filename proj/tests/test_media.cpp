#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "vofa/frame_io.hpp"
#include "vofa/manifest.hpp"
#include "vofa/rng.hpp"
#include "vofa/synth.hpp"
#include "vofa/text.hpp"
#include "vofa/video.hpp"

namespace fs = std::filesystem;
using vofa::VideoClip;

namespace {

VideoClip noise_clip(int t, int h, int w, uint64_t seed) {
    VideoClip c(t, h, w);
    vofa::Rng rng(seed, "noise-clip");
    for (auto& p : c.pixels) p = static_cast<uint8_t>(rng.next_below(256));
    return c;
}

// independent reference: direct 2D bilinear with pixel-center alignment
std::vector<uint8_t> reference_bilinear(const uint8_t* src, int sh, int sw, int dh, int dw) {
    std::vector<uint8_t> out(static_cast<size_t>(dh) * dw * 3);
    for (int y = 0; y < dh; ++y)
        for (int x = 0; x < dw; ++x)
            for (int c = 0; c < 3; ++c) {
                double fy = (y + 0.5) * sh / static_cast<double>(dh) - 0.5;
                double fx = (x + 0.5) * sw / static_cast<double>(dw) - 0.5;
                fy = std::min(std::max(fy, 0.0), sh - 1.0);
                fx = std::min(std::max(fx, 0.0), sw - 1.0);
                const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
                const int y1 = std::min(y0 + 1, sh - 1), x1 = std::min(x0 + 1, sw - 1);
                const double ay = fy - y0, ax = fx - x0;
                auto px = [&](int yy, int xx) { return static_cast<double>(src[(static_cast<size_t>(yy) * sw + xx) * 3 + c]); };
                const double v = px(y0, x0) * (1 - ay) * (1 - ax) + px(y0, x1) * (1 - ay) * ax +
                                 px(y1, x0) * ay * (1 - ax) + px(y1, x1) * ay * ax;
                out[(static_cast<size_t>(y) * dw + x) * 3 + c] =
                    static_cast<uint8_t>(std::lround(std::min(std::max(v, 0.0), 255.0)));
            }
    return out;
}

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("vofa_media_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("resize 448x224 to target 224 gives a 224 square") {
    auto clip = noise_clip(2, 224, 448, 1);
    auto out = vofa::resize_shorter_side(clip, 224);
    CHECK(out.h == 224);
    CHECK(out.w == 224);
    CHECK(out.t == 2);
}

TEST_CASE("resize at the target size is the identity") {
    auto clip = noise_clip(3, 224, 224, 2);
    auto out = vofa::resize_shorter_side(clip, 224);
    CHECK(out.pixels == clip.pixels);
}

TEST_CASE("resize 100x50 to 32 matches the formula and the bilinear oracle") {
    auto clip = noise_clip(1, 50, 100, 3);
    auto out = vofa::resize_shorter_side(clip, 32);
    CHECK(out.h == 32);
    CHECK(out.w == 32);
    // longer side before crop: round(100*32/50) = 64, crop offset (64-32)/2 = 16
    auto full = reference_bilinear(clip.frame(0), 50, 100, 32, 64);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            for (int c = 0; c < 3; ++c)
                REQUIRE(static_cast<int>(out.at(0, y, x, c)) ==
                        static_cast<int>(full[(static_cast<size_t>(y) * 64 + (x + 16)) * 3 + c]));
}

TEST_CASE("resize rejects an empty clip") {
    VideoClip empty;
    CHECK_THROWS_AS(vofa::resize_shorter_side(empty, 32), vofa::VideoError);
}

TEST_CASE("linear frame sampling follows floor(i*T/n)") {
    CHECK(vofa::linear_frame_indices(8, 8) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(vofa::linear_frame_indices(16, 8) == std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14});
    CHECK(vofa::linear_frame_indices(5, 8) == std::vector<int>{0, 0, 1, 1, 2, 3, 3, 4});
}

TEST_CASE("linear frame sampling is monotone and idempotent at T == n") {
    vofa::Rng rng(4, "sample-prop");
    for (int it = 0; it < 100; ++it) {
        const int t = 1 + static_cast<int>(rng.next_below(20));
        const int n = 1 + static_cast<int>(rng.next_below(20));
        auto idx = vofa::linear_frame_indices(t, n);
        for (size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] >= idx[i - 1]);
        CHECK(idx.front() == 0);
        CHECK(idx.back() < t);
    }
    auto clip = noise_clip(6, 8, 8, 5);
    auto same = vofa::sample_frames_linear(clip, 6);
    CHECK(same.pixels == clip.pixels);
}

TEST_CASE("patchify shapes and zero projection") {
    auto clip = noise_clip(8, 32, 32, 6);
    CHECK(vofa::patches_per_frame(32, 32, 16) == 4);
    vofa::Tensor<float> w({16 * 16 * 3, 12});
    vofa::Tensor<float> b({12});
    auto grid = vofa::patchify(clip, 16, w, b);
    CHECK(grid.t == 8);
    CHECK(grid.p == 4);
    CHECK(grid.d == 12);
    for (float v : grid.tokens) CHECK(v == 0.0f);
    CHECK_THROWS_WITH(vofa::patches_per_frame(30, 32, 16), Catch::Matchers::ContainsSubstring("30"));
}

TEST_CASE("tokenizer round-trips normalized text") {
    std::vector<std::string> corpus = {"A Red square moves left!", "what color is the square?"};
    auto tok = vofa::TextTokenizer::build(corpus);
    for (const auto& s : corpus) {
        auto norm = vofa::TextTokenizer::normalize(s);
        CHECK(tok.detokenize(tok.tokenize(s)) == norm);
        CHECK(tok.detokenize(tok.tokenize(norm)) == norm);
    }
    CHECK(tok.id("<unk>") == vofa::TextTokenizer::kUnk);
    CHECK(tok.id("nonexistent-word") == vofa::TextTokenizer::kUnk);
}

TEST_CASE("vocab build is deterministic and covers corpus plus specials") {
    vofa::DatasetManifest m;
    m.records.push_back({"c1", "p1", {"a b"}, {{"c?", "d"}}});
    auto tok1 = vofa::build_vocab({&m});
    auto tok2 = vofa::build_vocab({&m});
    CHECK(tok1.tokens() == tok2.tokens());
    for (const auto& w : {"a", "b", "c", "?", "d", "yes", "no", "0", "31", "describe"})
        CHECK(tok1.contains(w));
}

TEST_CASE("manifest rejects bad records with line numbers") {
    auto dir = temp_dir("manifest");
    {
        std::ofstream f(dir / "bad_empty.jsonl");
        f << R"({"clip_id":"a","frames_path":"p","captions":[],"qa":[]})" << "\n";
    }
    CHECK_THROWS_WITH(vofa::load_manifest(dir / "bad_empty.jsonl"),
                      Catch::Matchers::ContainsSubstring(":1:"));
    {
        std::ofstream f(dir / "bad_dup.jsonl");
        f << R"({"clip_id":"a","frames_path":"p","captions":["x"],"qa":[]})" << "\n";
        f << R"({"clip_id":"a","frames_path":"q","captions":["y"],"qa":[]})" << "\n";
    }
    CHECK_THROWS_WITH(vofa::load_manifest(dir / "bad_dup.jsonl"),
                      Catch::Matchers::ContainsSubstring("duplicate clip_id") &&
                          Catch::Matchers::ContainsSubstring(":2:"));
    {
        std::ofstream f(dir / "bad_json.jsonl");
        f << R"({"clip_id":"a","frames_path":"p","captions":["x"],"qa":[]})" << "\n";
        f << "{not json\n";
    }
    CHECK_THROWS_WITH(vofa::load_manifest(dir / "bad_json.jsonl"), Catch::Matchers::ContainsSubstring(":2:"));
}

TEST_CASE("manifest save/load round-trip") {
    auto dir = temp_dir("manifest_rt");
    vofa::DatasetManifest m;
    m.records.push_back({"c1", "clips/c1.vofr", {"a red square"}, {}});
    m.records.push_back({"c2", "clips/c2", {"a blue circle", "second caption"}, {{"what color is the circle ?", "blue"}}});
    vofa::save_manifest(dir / "m.jsonl", m);
    auto back = vofa::load_manifest(dir / "m.jsonl");
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[1].captions.size() == 2);
    CHECK(back.records[1].qa.size() == 1);
    CHECK(back.records[1].qa[0].answer == "blue");
}

TEST_CASE("png encode/decode round-trip") {
    auto clip = noise_clip(1, 17, 23, 7);
    auto png = vofa::encode_png_rgb(clip.frame(0), clip.h, clip.w);
    auto img = vofa::decode_png(png);
    CHECK(img.h == 17);
    CHECK(img.w == 23);
    CHECK(img.rgb == std::vector<uint8_t>(clip.pixels.begin(), clip.pixels.end()));
}

TEST_CASE("vofr encode/decode round-trip and clip loading") {
    auto dir = temp_dir("frames");
    auto clip = noise_clip(5, 12, 12, 8);
    clip.clip_id = "c";
    vofa::write_clip_vofr(dir / "c.vofr", clip);
    auto back = vofa::load_clip(dir / "c.vofr");
    CHECK(back.t == 5);
    CHECK(back.pixels == clip.pixels);

    vofa::write_clip_png_dir(dir / "c_png", clip);
    auto from_png = vofa::load_clip(dir / "c_png");
    CHECK(from_png.t == 5);
    CHECK(from_png.pixels == clip.pixels);

    CHECK_THROWS_AS(vofa::load_clip(dir / "missing.vofr"), vofa::IoError);
}

TEST_CASE("synthetic corpus is deterministic") {
    vofa::SyntheticSpec spec;
    spec.n_clips = 12;
    spec.seed = 9;
    auto a = vofa::generate_synthetic_corpus(spec);
    auto b = vofa::generate_synthetic_corpus(spec);
    REQUIRE(a.clips.size() == b.clips.size());
    for (size_t i = 0; i < a.clips.size(); ++i) CHECK(a.clips[i].pixels == b.clips[i].pixels);
    for (size_t i = 0; i < a.manifest.records.size(); ++i)
        CHECK(vofa::record_to_json(a.manifest.records[i]).dump() ==
              vofa::record_to_json(b.manifest.records[i]).dump());
}

TEST_CASE("caption grammar is the script definition") {
    vofa::EventScript s;
    s.subject = {"square", "red", vofa::detail::color_rgb("red"), 16, 16, 10};
    s.events = {vofa::EventKind::move_left};
    CHECK(vofa::caption_for(s) == "a red square moves left");
    s.events = {vofa::EventKind::appear, vofa::EventKind::move_right};
    CHECK(vofa::caption_for(s) == "a red square appears then moves right");
}

TEST_CASE("two-event captions change under frame reversal") {
    vofa::SyntheticSpec spec;
    spec.n_clips = 64;
    spec.two_event_fraction = 1.0;
    spec.seed = 11;
    auto corpus = vofa::generate_synthetic_corpus(spec);
    int checked = 0;
    for (size_t i = 0; i < corpus.scripts.size(); ++i) {
        const auto& script = corpus.scripts[i];
        if (script.events.size() != 2) continue;
        ++checked;
        CHECK(vofa::caption_for(script).find("then") != std::string::npos);
        CHECK(vofa::caption_for(vofa::reverse_script(script)) != vofa::caption_for(script));
        // the rendered clip must itself be order-sensitive
        const auto& clip = corpus.clips[i];
        bool differs = false;
        for (int f = 0; f < clip.t && !differs; ++f)
            differs = std::memcmp(clip.frame(f), clip.frame(clip.t - 1 - f), clip.frame_bytes()) != 0;
        CHECK(differs);
    }
    CHECK(checked == 64);
}

TEST_CASE("rendering both orders realizes the reversed script's caption") {
    vofa::EventScript s;
    s.subject = {"circle", "blue", vofa::detail::color_rgb("blue"), 16.0, 16.0, 10};
    s.events = {vofa::EventKind::appear, vofa::EventKind::move_left};
    auto fwd = vofa::render_script(s, 8, 32);
    auto rev_script = vofa::reverse_script(s);
    REQUIRE(rev_script.events.size() == 2);
    CHECK(rev_script.events[0] == vofa::EventKind::move_right);
    CHECK(rev_script.events[1] == vofa::EventKind::disappear);
    auto rev = vofa::render_script(rev_script, 8, 32);
    CHECK(vofa::caption_for(rev_script) != vofa::caption_for(s));
    // forward clip: subject hidden early; reversed script: visible at frame 0
    CHECK(fwd.pixels != rev.pixels);
}

TEST_CASE("qa pairs reference the subject and stay in vocabulary") {
    vofa::SyntheticSpec spec;
    spec.n_clips = 200;
    spec.qa_fraction = 0.25;
    spec.seed = 13;
    auto corpus = vofa::generate_synthetic_corpus(spec);
    int qa = 0;
    for (size_t i = 0; i < corpus.manifest.records.size(); ++i) {
        for (const auto& pair : corpus.manifest.records[i].qa) {
            ++qa;
            const auto& subject = corpus.scripts[i].subject;
            const bool color_q = pair.question.find("color") != std::string::npos;
            CHECK(pair.answer == (color_q ? subject.color : subject.shape));
        }
    }
    // 25% of clips, binomially
    CHECK(qa > 200 * 0.25 * 0.5);
    CHECK(qa < 200 * 0.25 * 1.6);
}

TEST_CASE("static scenes have no motion words and identical frames") {
    vofa::SyntheticSpec spec;
    spec.n_clips = 10;
    spec.static_scenes = true;
    spec.seed = 17;
    auto corpus = vofa::generate_synthetic_corpus(spec);
    for (size_t i = 0; i < corpus.clips.size(); ++i) {
        const auto& caption = corpus.manifest.records[i].captions[0];
        CHECK(caption.find("moves") == std::string::npos);
        CHECK(caption.find("appears") == std::string::npos);
        const auto& clip = corpus.clips[i];
        for (int f = 1; f < clip.t; ++f)
            CHECK(std::memcmp(clip.frame(f), clip.frame(0), clip.frame_bytes()) == 0);
    }
}

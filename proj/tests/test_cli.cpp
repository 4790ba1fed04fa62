#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using testutil::run_cmd;
using testutil::slurp;

namespace {

const std::string cli = VOFA_CLI_PATH;

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream f(p);
    f << content;
}

std::string synth_spec(int n_clips, uint64_t seed, int frames = 8) {
    json j;
    j["n_clips"] = n_clips;
    j["frames_per_clip"] = frames;
    j["canvas_px"] = 16;
    j["seed"] = seed;
    return j.dump();
}

std::string train_config(const std::string& manifest, int epochs = 2) {
    json j;
    j["seed"] = 11;
    j["data"] = {{"n_frames", 4}, {"frame_px", 16}};
    j["model"] = {{"hidden", 32}, {"enc_layers", 1}, {"dec_layers", 1}, {"heads", 2},
                  {"ffn_multiple", 2}, {"patch_size", 8}};
    j["stages"] = json::array({
        json{{"stage", "image_text"}, {"train_manifest", manifest}, {"epochs", 1}, {"batch_size", 4}, {"lr", 1e-3}},
        json{{"stage", "ipt"}, {"train_manifest", manifest}, {"epochs", 1}, {"batch_size", 4}, {"lr", 1e-3}},
        json{{"stage", "finetune"}, {"train_manifest", manifest}, {"val_manifest", manifest},
             {"epochs", epochs}, {"batch_size", 4}, {"lr", 1e-3}},
    });
    j["eval"] = {{"beam", 2}, {"max_len", 12}};
    return j.dump();
}

}  // namespace

TEST_CASE("synth is byte-deterministic and reports corpus stats") {
    auto dir = testutil::fresh_dir("vofa_cli_synth");
    write_file(dir / "spec.json", synth_spec(32, 5));

    auto r1 = run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "a").string());
    REQUIRE(r1.exit_code == 0);
    auto r2 = run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "b").string());
    REQUIRE(r2.exit_code == 0);

    CHECK(slurp(dir / "a" / "manifest.jsonl") == slurp(dir / "b" / "manifest.jsonl"));
    int lines = 0, two_event = 0;
    std::ifstream mf(dir / "a" / "manifest.jsonl");
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        ++lines;
        auto rec = json::parse(line);
        if (rec.at("captions")[0].get<std::string>().find(" then ") != std::string::npos) ++two_event;
        auto clip = rec.at("frames_path").get<std::string>();
        CHECK(slurp(dir / "a" / clip) == slurp(dir / "b" / clip));
    }
    CHECK(lines == 32);

    auto summary = json::parse(r1.output);
    CHECK(summary.at("n_clips").get<int>() == 32);
    CHECK(summary.at("two_event_clips").get<int>() == two_event);
}

TEST_CASE("synth --png emits loadable PNG frame directories") {
    auto dir = testutil::fresh_dir("vofa_cli_png");
    write_file(dir / "spec.json", synth_spec(2, 6));
    auto r = run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "out").string() + " --png");
    REQUIRE(r.exit_code == 0);
    CHECK(fs::is_directory(dir / "out" / "clips" / "clip000000"));
    CHECK(fs::exists(dir / "out" / "clips" / "clip000000" / "000000.png"));
    auto clip = vofa::load_clip(dir / "out" / "clips" / "clip000000");
    CHECK(clip.t == 8);
    CHECK(clip.h == 16);
}

TEST_CASE("synth to an unwritable path exits with code 2") {
    auto dir = testutil::fresh_dir("vofa_cli_unwritable");
    write_file(dir / "spec.json", synth_spec(2, 7));
    auto r = run_cmd(cli + " synth " + (dir / "spec.json").string() + " /proc/vofa_forbidden");
    CHECK(r.exit_code == 2);
}

TEST_CASE("train produces checkpoints, reports, curve; reruns are bit-identical") {
    auto dir = testutil::fresh_dir("vofa_cli_train");
    write_file(dir / "spec.json", synth_spec(8, 8, 4));
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    write_file(dir / "train.json", train_config("corpus/manifest.jsonl"));

    auto r1 = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "run1").string());
    REQUIRE(r1.exit_code == 0);
    for (const char* f : {"ckpt_last.vofa", "ckpt_best.vofa", "ckpt_stage0.vofa", "ckpt_stage1.vofa",
                          "ckpt_stage2.vofa", "curve.jsonl"})
        CHECK(fs::exists(dir / "run1" / f));

    auto r2 = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "run2").string());
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(dir / "run1" / "ckpt_last.vofa") == slurp(dir / "run2" / "ckpt_last.vofa"));
    CHECK(slurp(dir / "run1" / "curve.jsonl") == slurp(dir / "run2" / "curve.jsonl"));

    // every curve line is valid JSON with a step field
    std::ifstream curve(dir / "run1" / "curve.jsonl");
    std::string line;
    int reports = 0;
    while (std::getline(curve, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        CHECK(j.contains("step"));
    }
    for (const auto& e : fs::directory_iterator(dir / "run1"))
        if (e.path().filename().string().rfind("report_", 0) == 0) ++reports;
    CHECK(reports >= 1);
}

TEST_CASE("resume from a stage checkpoint reproduces the uninterrupted run") {
    auto dir = testutil::fresh_dir("vofa_cli_resume");
    write_file(dir / "spec.json", synth_spec(8, 9, 4));
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    write_file(dir / "train.json", train_config("corpus/manifest.jsonl"));

    REQUIRE(run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "full").string())
                .exit_code == 0);
    auto r = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "resumed").string() +
                     " --resume " + (dir / "full" / "ckpt_stage1.vofa").string());
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(dir / "full" / "ckpt_last.vofa") == slurp(dir / "resumed" / "ckpt_last.vofa"));
}

TEST_CASE("checkpoint save-load-save is byte-identical through eval reruns") {
    auto dir = testutil::fresh_dir("vofa_cli_eval");
    write_file(dir / "spec.json", synth_spec(6, 10, 4));
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    write_file(dir / "train.json", train_config("corpus/manifest.jsonl", 1));
    REQUIRE(run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "run").string())
                .exit_code == 0);

    const std::string eval_cmd = cli + " eval --ckpt " + (dir / "run" / "ckpt_last.vofa").string() +
                                 " --manifest " + (dir / "corpus" / "manifest.jsonl").string() + " --beam 1";
    auto e1 = run_cmd(eval_cmd);
    auto e2 = run_cmd(eval_cmd);
    REQUIRE(e1.exit_code == 0);
    CHECK(e1.output == e2.output);
    auto j = json::parse(e1.output);
    CHECK(j.at("metrics").contains("cider_d"));
    CHECK(j.at("n_items").get<int>() == 6);
}

TEST_CASE("eval --task qa on a manifest without qa names the missing field") {
    auto dir = testutil::fresh_dir("vofa_cli_qa_missing");
    write_file(dir / "spec.json", R"({"n_clips": 4, "frames_per_clip": 4, "canvas_px": 16, "qa_fraction": 0.0, "seed": 3})");
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    write_file(dir / "train.json", train_config("corpus/manifest.jsonl", 1));
    REQUIRE(run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "run").string())
                .exit_code == 0);
    auto r = run_cmd(cli + " eval --ckpt " + (dir / "run" / "ckpt_last.vofa").string() + " --manifest " +
                     (dir / "corpus" / "manifest.jsonl").string() + " --task qa");
    CHECK(r.exit_code != 0);
    CHECK(r.output.find("qa") != std::string::npos);
}

TEST_CASE("caption and qa decode a clip; --json wraps hypotheses") {
    auto dir = testutil::fresh_dir("vofa_cli_caption");
    write_file(dir / "spec.json", synth_spec(6, 11, 4));
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    write_file(dir / "train.json", train_config("corpus/manifest.jsonl", 1));
    REQUIRE(run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "run").string())
                .exit_code == 0);

    const std::string clip = (dir / "corpus" / "clips" / "clip000000.vofr").string();
    const std::string ckpt = (dir / "run" / "ckpt_last.vofa").string();
    auto c1 = run_cmd(cli + " caption --ckpt " + ckpt + " --frames " + clip + " --beam 1");
    auto c2 = run_cmd(cli + " caption --ckpt " + ckpt + " --frames " + clip + " --beam 1");
    REQUIRE(c1.exit_code == 0);
    CHECK(c1.output == c2.output);

    auto cj = run_cmd(cli + " caption --ckpt " + ckpt + " --frames " + clip + " --beam 2 --json");
    REQUIRE(cj.exit_code == 0);
    auto j = json::parse(cj.output);
    CHECK(j.contains("text"));
    CHECK(j.at("hypotheses").size() >= 1);

    auto q = run_cmd(cli + " qa --ckpt " + ckpt + " --frames " + clip +
                     " --question \"what color is the square ?\" --beam 1");
    CHECK(q.exit_code == 0);

    auto missing = run_cmd(cli + " caption --ckpt " + ckpt + " --frames " + (dir / "nope.vofr").string());
    CHECK(missing.exit_code == 2);
}

TEST_CASE("an overfit checkpoint captions its training clips; beam 4 >= beam 1 on CIDEr") {
    auto dir = testutil::fresh_dir("vofa_cli_overfit");
    write_file(dir / "spec.json", R"({"n_clips": 4, "frames_per_clip": 4, "canvas_px": 16, "qa_fraction": 0.0, "seed": 21})");
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    json cfg = json::parse(train_config("corpus/manifest.jsonl", 1));
    cfg["stages"] = json::array({json{{"stage", "finetune"},
                                      {"train_manifest", "corpus/manifest.jsonl"},
                                      {"epochs", 300},
                                      {"batch_size", 4},
                                      {"lr", 3e-3}}});
    write_file(dir / "train.json", cfg.dump());
    REQUIRE(run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "run").string())
                .exit_code == 0);
    const std::string ckpt = (dir / "run" / "ckpt_last.vofa").string();

    std::ifstream mf(dir / "corpus" / "manifest.jsonl");
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        auto rec = json::parse(line);
        auto r = run_cmd(cli + " caption --ckpt " + ckpt + " --frames " +
                         (dir / "corpus" / rec.at("frames_path").get<std::string>()).string() + " --beam 4");
        REQUIRE(r.exit_code == 0);
        auto text = r.output;
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        CHECK(text == rec.at("captions")[0].get<std::string>());
    }

    auto eval_cider = [&](int beam) {
        auto r = run_cmd(cli + " eval --ckpt " + ckpt + " --manifest " +
                         (dir / "corpus" / "manifest.jsonl").string() + " --beam " + std::to_string(beam));
        REQUIRE(r.exit_code == 0);
        return json::parse(r.output).at("metrics").at("cider_d").get<double>();
    };
    CHECK(eval_cider(4) >= eval_cider(1));
}

TEST_CASE("--dump-samples writes the epoch streams as JSON-lines") {
    auto dir = testutil::fresh_dir("vofa_cli_dump");
    write_file(dir / "spec.json", synth_spec(8, 22, 4));
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    write_file(dir / "train.json", train_config("corpus/manifest.jsonl", 1));
    auto r = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "run").string() +
                     " --dump-samples " + (dir / "samples.jsonl").string());
    REQUIRE(r.exit_code == 0);
    std::ifstream f(dir / "samples.jsonl");
    std::string line;
    int n = 0, fom = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        ++n;
        auto j = json::parse(line);
        for (const char* k : {"task_tag", "source_tokens", "target_tokens", "clip_id", "frame_order"})
            REQUIRE(j.contains(k));
        if (j.at("task_tag").get<std::string>() == "fom_con") ++fom;
    }
    // image_text epoch: 8 caption samples; ipt epoch: 8+8+1; finetune: 8
    CHECK(n == 8 + 17 + 8);
    CHECK(fom == 1);
}

TEST_CASE("score passthrough equals the metric identities") {
    auto dir = testutil::fresh_dir("vofa_cli_score");
    write_file(dir / "preds.jsonl",
               R"({"clip_id":"a","text":"a red square moves left"})"
               "\n"
               R"({"clip_id":"b","text":"a blue circle appears"})"
               "\n");
    write_file(dir / "refs.jsonl",
               R"({"clip_id":"a","captions":["a red square moves left"]})"
               "\n"
               R"({"clip_id":"b","captions":["a blue circle appears"]})"
               "\n");
    auto r = run_cmd(cli + " score --predictions " + (dir / "preds.jsonl").string() + " --references " +
                     (dir / "refs.jsonl").string());
    REQUIRE(r.exit_code == 0);
    auto j = json::parse(r.output);
    CHECK(j.at("metrics").at("bleu4").get<double>() == Catch::Approx(1.0));
    CHECK(j.at("metrics").at("rouge_l").get<double>() == Catch::Approx(1.0));
    CHECK(j.at("metrics").at("cider_d").get<double>() == Catch::Approx(10.0));
}

TEST_CASE("ablation flag rewrites the ipt mix") {
    auto dir = testutil::fresh_dir("vofa_cli_ablation");
    write_file(dir / "spec.json", synth_spec(8, 12, 4));
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    write_file(dir / "train.json", train_config("corpus/manifest.jsonl", 1));

    auto a = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "caption_only").string() +
                     " --ipt-tasks caption");
    REQUIRE(a.exit_code == 0);
    auto b = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "all_tasks").string() +
                     " --ipt-tasks caption,match,fom_con");
    REQUIRE(b.exit_code == 0);
    // caption-only ipt consumes half the samples: fewer steps in the curve
    auto count_lines = [](const fs::path& p) {
        std::ifstream f(p);
        std::string line;
        int n = 0;
        while (std::getline(f, line)) n += !line.empty();
        return n;
    };
    CHECK(count_lines(dir / "caption_only" / "curve.jsonl") < count_lines(dir / "all_tasks" / "curve.jsonl"));
    CHECK(fs::exists(dir / "caption_only" / "ckpt_last.vofa"));
    CHECK(fs::exists(dir / "all_tasks" / "ckpt_last.vofa"));
}

TEST_CASE("VOFA_SEED and --set override the config") {
    auto dir = testutil::fresh_dir("vofa_cli_seed");
    write_file(dir / "spec.json", synth_spec(6, 13, 4));
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    write_file(dir / "train.json", train_config("corpus/manifest.jsonl", 1));

    auto a = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "s1").string() +
                     " --seed 99");
    auto b = run_cmd("VOFA_SEED=99 " + cli + " train " + (dir / "train.json").string() + " --out " +
                     (dir / "s2").string());
    auto c = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "s3").string() +
                     " --set seed=99");
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    REQUIRE(c.exit_code == 0);
    CHECK(slurp(dir / "s1" / "ckpt_last.vofa") == slurp(dir / "s2" / "ckpt_last.vofa"));
    CHECK(slurp(dir / "s1" / "ckpt_last.vofa") == slurp(dir / "s3" / "ckpt_last.vofa"));

    auto d = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "s4").string() +
                     " --set seed=100");
    REQUIRE(d.exit_code == 0);
    CHECK(slurp(dir / "s1" / "ckpt_last.vofa") != slurp(dir / "s4" / "ckpt_last.vofa"));

    auto bad = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "s5").string() +
                       " --set nonexistent_key=1");
    CHECK(bad.exit_code == 1);
    CHECK(bad.output.find("unknown key") != std::string::npos);
}

TEST_CASE("diverging training exits with code 3") {
    auto dir = testutil::fresh_dir("vofa_cli_nan");
    write_file(dir / "spec.json", synth_spec(6, 14, 4));
    REQUIRE(run_cmd(cli + " synth " + (dir / "spec.json").string() + " " + (dir / "corpus").string()).exit_code == 0);
    write_file(dir / "train.json", train_config("corpus/manifest.jsonl", 1));
    auto r = run_cmd(cli + " train " + (dir / "train.json").string() + " --out " + (dir / "run").string() +
                     " --set stages.0.lr=1e30");
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("diverged") != std::string::npos);
}

TEST_CASE("corrupt checkpoint exits with code 4") {
    auto dir = testutil::fresh_dir("vofa_cli_badckpt");
    write_file(dir / "bad.vofa", "VOFA1garbage");
    auto r = run_cmd(cli + " eval --ckpt " + (dir / "bad.vofa").string() + " --manifest x.jsonl");
    CHECK(r.exit_code == 4);
}

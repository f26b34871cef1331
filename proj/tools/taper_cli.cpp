// taper: train and benchmark a width/depth-adaptive transformer classifier.
//
// Subcommands:
//   gen      write a synthetic pre-tokenized classification corpus
//   train    run the staged training schedule from a json config
//   bench    sweep halt values over a corpus, report FLOPs/speedup/accuracy
//   inspect  summarize a checkpoint

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "taper/taper.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

taper::ModelConfig model_from_json(const json& j) {
    taper::ModelConfig cfg;
    cfg.layers = j.value("layers", cfg.layers);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.ffn = j.value("ffn", cfg.ffn);
    cfg.classes = j.value("classes", cfg.classes);
    cfg.vocab = j.value("vocab", cfg.vocab);
    cfg.max_len = j.value("max_len", cfg.max_len);
    cfg.sub_hidden = j.value("sub_hidden", cfg.hidden / 2);
    cfg.attn_scale_full_dim = j.value("attn_scale_full_dim", false);
    cfg.validate();
    return cfg;
}

json model_to_json(const taper::ModelConfig& cfg) {
    return json{{"layers", cfg.layers},   {"hidden", cfg.hidden},
                {"heads", cfg.heads},     {"ffn", cfg.ffn},
                {"classes", cfg.classes}, {"vocab", cfg.vocab},
                {"max_len", cfg.max_len}, {"sub_hidden", cfg.sub_hidden},
                {"attn_scale_full_dim", cfg.attn_scale_full_dim}};
}

taper::TrainPlan plan_from_json(const json& j) {
    taper::TrainPlan plan;
    if (j.contains("preset")) {
        std::array<int, 4> epochs{-1, -1, -1, -1};
        if (j.contains("epochs")) {
            const auto& e = j["epochs"];
            if (!e.is_array() || e.size() != 4)
                throw taper::ConfigError("plan.epochs must be an array of four integers");
            for (int i = 0; i < 4; ++i) epochs[i] = e[i].get<int>();
        }
        plan = taper::make_plan(j["preset"].get<std::string>(), epochs);
    } else if (j.contains("epochs")) {
        const auto& e = j["epochs"];
        if (!e.is_array() || e.size() != 4)
            throw taper::ConfigError("plan.epochs must be an array of four integers");
        plan.epochs_regular = e[0].get<int>();
        plan.epochs_soft = e[1].get<int>();
        plan.epochs_hard = e[2].get<int>();
        plan.epochs_sub = e[3].get<int>();
        plan.sub_stage_pruning = plan.epochs_hard > 0 && plan.epochs_sub > 0;
    }
    plan.lr = j.value("lr", plan.lr);
    plan.batch_size = j.value("batch_size", plan.batch_size);
    plan.delta_final = j.value("delta_final", plan.delta_final);
    plan.temperature = j.value("temperature", plan.temperature);
    plan.lambda = j.value("lambda", plan.lambda);
    plan.sub_stage_pruning = j.value("sub_stage_pruning", plan.sub_stage_pruning);
    plan.seed = j.value("seed", plan.seed);
    if (j.contains("tau_grid")) plan.tau_grid = j["tau_grid"].get<std::vector<double>>();
    plan.validate();
    return plan;
}

json plan_to_json(const taper::TrainPlan& plan) {
    return json{{"preset", plan.preset},
                {"epochs", {plan.epochs_regular, plan.epochs_soft, plan.epochs_hard, plan.epochs_sub}},
                {"lr", plan.lr},
                {"batch_size", plan.batch_size},
                {"delta_final", plan.delta_final},
                {"temperature", plan.temperature},
                {"lambda", plan.lambda},
                {"sub_stage_pruning", plan.sub_stage_pruning},
                {"tau_grid", plan.tau_grid},
                {"seed", plan.seed}};
}

taper::CorpusFormat format_for(const std::string& explicit_fmt, const std::string& path) {
    if (!explicit_fmt.empty()) return taper::parse_format(explicit_fmt);
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".tsv") return taper::CorpusFormat::tsv;
    return taper::CorpusFormat::jsonl;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw taper::InputError("cannot open for writing: " + path);
    out << content;
}

int cmd_gen(const std::string& out_path, taper::SynthSpec spec, uint64_t seed,
            const std::string& fmt) {
    const taper::Corpus corpus = taper::synth_task(spec, seed);
    taper::export_corpus(corpus, out_path, format_for(fmt, out_path));
    const taper::LengthStats stats = corpus.stats();
    std::cout << "wrote " << stats.count << " examples to " << out_path << "\n"
              << "classes " << corpus.classes << ", vocab " << corpus.vocab << ", length "
              << stats.min_len << ".." << stats.max_len << " (mean " << stats.mean_len << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw taper::InputError("cannot open config: " + config_path);
    json cfg_json;
    in >> cfg_json;

    const taper::ModelConfig mcfg = model_from_json(cfg_json.value("model", json::object()));
    const taper::TrainPlan plan = plan_from_json(cfg_json.value("plan", json::object()));
    const json data_json = cfg_json.value("data", json::object());
    if (!data_json.contains("train")) throw taper::ConfigError("config.data.train is required");
    const std::string train_path = data_json["train"].get<std::string>();
    const std::string out_dir = cfg_json.value("out_dir", std::string("taper_run"));
    fs::create_directories(out_dir);

    const taper::Corpus corpus =
        taper::ingest(train_path, format_for(data_json.value("format", std::string()), train_path),
                      mcfg.classes, mcfg.vocab);
    std::cout << "training on " << corpus.examples.size() << " examples, plan " << plan.preset
              << " (" << plan.epochs_regular << "," << plan.epochs_soft << "," << plan.epochs_hard
              << "," << plan.epochs_sub << ")\n";

    // Echo the fully resolved config next to the outputs; re-running from it
    // reproduces this run.
    json echo{{"model", model_to_json(mcfg)},
              {"plan", plan_to_json(plan)},
              {"data", {{"train", train_path}}},
              {"out_dir", out_dir}};
    write_text(out_dir + "/config.json", echo.dump(2) + "\n");

    taper::Model model(mcfg, plan.seed);
    const auto t0 = std::chrono::steady_clock::now();
    const taper::TrainLog log =
        taper::run_plan(model, corpus, plan, [&](const std::string& stage, const taper::Model& m,
                                                 const taper::TrainLog& so_far) {
            const std::string path = out_dir + "/ckpt_" + stage + ".bin";
            taper::save_checkpoint(m, path, stage);
            std::cout << "stage " << stage << " done, checkpoint " << path;
            if (!so_far.stages.empty() && !so_far.stages.back().epoch_loss.empty())
                std::cout << " (last epoch loss " << so_far.stages.back().epoch_loss.back() << ")";
            std::cout << "\n";
        });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ostringstream log_text;
    log_text << "stage\tepoch\tmean_loss\n";
    for (const taper::StageLog& s : log.stages)
        for (size_t e = 0; e < s.epoch_loss.size(); ++e)
            log_text << s.stage << '\t' << (e + 1) << '\t' << s.epoch_loss[e] << '\n';
    write_text(out_dir + "/train_log.tsv", log_text.str());
    std::cout << "finished in " << secs << "s, log at " << out_dir << "/train_log.tsv\n";
    return 0;
}

int cmd_bench(const std::string& ckpt_path, const std::string& corpus_path, std::vector<double> taus,
              const std::string& out_dir, const std::string& fmt, bool no_pruning, bool no_exit) {
    const taper::LoadedCheckpoint lc = taper::load_checkpoint(ckpt_path);
    const taper::Corpus corpus = taper::ingest(
        corpus_path, format_for(fmt, corpus_path), lc.model.cfg.classes, lc.model.cfg.vocab);
    if (corpus.examples.empty()) throw taper::InputError("bench: empty corpus");
    fs::create_directories(out_dir);

    taper::PruneConfig pc;
    pc.mode = no_pruning ? taper::PruneMode::disabled : taper::PruneMode::hard;
    if (taus.empty()) taus = {0.1, 0.5, 0.8};

    std::vector<taper::ExampleTrace> traces;
    const auto rows =
        taper::speedup_report(corpus.examples, lc.model, pc, taus, !no_exit, &traces);

    std::ostringstream tsv;
    taper::write_report_tsv(rows, tsv);
    write_text(out_dir + "/report.tsv", tsv.str());
    write_text(out_dir + "/report.json", taper::report_to_json(rows).dump(2) + "\n");
    std::ostringstream jl;
    taper::write_trace_jsonl(traces, jl);
    write_text(out_dir + "/trace.jsonl", jl.str());

    std::cout << tsv.str();
    std::cout << "report in " << out_dir << "/report.{tsv,json}, per-example trace in " << out_dir
              << "/trace.jsonl\n";
    return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
    const taper::LoadedCheckpoint lc = taper::load_checkpoint(ckpt_path);
    const taper::ModelConfig& cfg = lc.model.cfg;
    std::cout << "checkpoint " << ckpt_path << "\n"
              << "stage tag  " << lc.stage_tag << "\n"
              << "config     L=" << cfg.layers << " d=" << cfg.hidden << " heads=" << cfg.heads
              << " ffn=" << cfg.ffn << " classes=" << cfg.classes << " vocab=" << cfg.vocab
              << " max_len=" << cfg.max_len << " sub_hidden=" << cfg.sub_hidden << "\n";
    int64_t by_group[4] = {0, 0, 0, 0};
    for (const taper::ParamTensor* p : lc.model.params().all())
        by_group[static_cast<int>(p->group)] += p->value.size();
    std::cout << "parameters " << lc.model.params().scalar_count() << " ("
              << "backbone " << by_group[0] << ", main_head " << by_group[1] << ", deltas "
              << by_group[2] << ", sub_head " << by_group[3] << ")\n";
    std::cout << "thresholds";
    for (int l = 1; l <= cfg.layers; ++l) std::cout << ' ' << lc.model.delta_at(l);
    std::cout << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"width/depth-adaptive transformer classifier"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic pre-tokenized corpus");
    std::string gen_out = "corpus.jsonl";
    std::string gen_fmt;
    uint64_t gen_seed = 1;
    taper::SynthSpec spec;
    gen->add_option("--out", gen_out, "output file (.jsonl or .tsv)")->required();
    gen->add_option("--format", gen_fmt, "jsonl or tsv (default: by extension)");
    gen->add_option("--examples", spec.examples, "number of examples");
    gen->add_option("--classes", spec.classes, "number of classes");
    gen->add_option("--vocab", spec.vocab, "token id space (id 0 is reserved)");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--markers", spec.markers, "salient marker tokens per example");
    gen->add_option("--mix", spec.bucket_mix, "short,middle,long bucket weights")->expected(3);
    gen->add_option("--min-len", spec.min_len, "minimum sequence length");
    gen->add_option("--max-len", spec.max_len, "maximum sequence length");

    // train
    auto* train = app.add_subcommand("train", "run the staged training schedule");
    std::string train_config;
    train->add_option("--config", train_config, "json config file")->required();

    // bench
    auto* bench = app.add_subcommand("bench", "sweep halt values and report speedup");
    std::string bench_ckpt, bench_corpus, bench_out = "bench_out", bench_fmt;
    std::vector<double> bench_taus;
    bool no_pruning = false, no_exit = false;
    bench->add_option("--checkpoint", bench_ckpt, "model checkpoint")->required();
    bench->add_option("--corpus", bench_corpus, "evaluation corpus")->required();
    bench->add_option("--tau", bench_taus, "halt values in [0,1]");
    bench->add_option("--out", bench_out, "output directory");
    bench->add_option("--format", bench_fmt, "corpus format override");
    bench->add_flag("--disable-pruning", no_pruning, "turn width-wise token pruning off");
    bench->add_flag("--disable-exit", no_exit, "turn depth-wise early exits off");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "summarize a checkpoint");
    std::string inspect_ckpt;
    inspect->add_option("--checkpoint", inspect_ckpt, "model checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(gen_out, spec, gen_seed, gen_fmt);
        if (train->parsed()) return cmd_train(train_config);
        if (bench->parsed())
            return cmd_bench(bench_ckpt, bench_corpus, bench_taus, bench_out, bench_fmt, no_pruning,
                             no_exit);
        if (inspect->parsed()) return cmd_inspect(inspect_ckpt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

// Command-line front end: dataset generation, training, evaluation, latency
// measurement and analysis exports. Machine-readable results go to stdout as
// one JSON object per line; human-oriented progress goes to stderr.
//
// Exit codes: 0 success, 2 usage/config error, 3 data or artifact error,
// 4 numeric failure during training.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <grq/analysis.hpp>
#include <grq/checkpoint.hpp>
#include <grq/config.hpp>
#include <grq/data.hpp>
#include <grq/runtime.hpp>
#include <grq/trainer.hpp>

namespace {

using nlohmann::json;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file (nested or dotted keys)");
    cmd->add_option("--set", args.sets, "override a config key, e.g. --set train.lr=0.005")
        ->take_all();
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&args](std::uint64_t v) { args.seed = v; }, "seed override");
}

grq::RunConfig load_run_config(const CommonArgs& args) {
    json root = json::object();
    if (!args.config_path.empty()) {
        const auto bytes = grq::io::read_file(args.config_path);
        try {
            root = json::parse(bytes.begin(), bytes.end());
        } catch (const json::exception& e) {
            throw grq::validation_error(args.config_path + ": not valid JSON: " + e.what());
        }
    }
    root = grq::cfg::expand_dotted(root);
    for (const std::string& s : args.sets) grq::cfg::apply_override(root, s);
    if (args.seed) root["train"]["seed"] = *args.seed;
    return grq::cfg::parse_run_config(root);
}

void emit(const json& j) { std::cout << j.dump() << "\n" << std::flush; }

int cmd_gen_data(const CommonArgs& common, const std::string& out_path) {
    grq::RunConfig rc = load_run_config(common);
    std::vector<grq::GaitSpec> gaits = rc.gaits.empty() ? grq::cfg::default_gaits() : rc.gaits;

    grq::Dataset ds;
    grq::Rng seeder(rc.train.seed);
    for (const grq::GaitSpec& g : gaits)
        for (std::int64_t i = 0; i < rc.data_count; ++i) {
            grq::Trajectory tr = grq::generate_trajectory(g, rc.data_steps, seeder.next_u64());
            if (!g.robot_enc.empty()) grq::attach_robot_encoding(tr, g.robot_enc);
            ds.trajectories.push_back(std::move(tr));
        }
    rc.gaits = gaits;
    ds.meta = {{"command", "gen-data"}, {"seed", rc.train.seed}, {"config", rc.resolved()}};
    grq::save_dataset(out_path, ds);

    std::cerr << "wrote " << ds.trajectories.size() << " trajectories ("
              << rc.data_steps << " steps each) to " << out_path << "\n";
    emit({{"event", "dataset"},
          {"path", out_path},
          {"trajectories", ds.trajectories.size()},
          {"steps_per_trajectory", rc.data_steps},
          {"obs_width", ds.trajectories.front().obs_width()},
          {"act_width", ds.trajectories.front().d_act},
          {"seed", rc.train.seed}});
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& dataset_path,
              const std::string& out_path) {
    grq::RunConfig rc = load_run_config(common);
    grq::Dataset ds = grq::load_dataset(dataset_path);
    if (ds.trajectories.empty()) throw grq::validation_error(dataset_path + ": dataset has no trajectories");
    if (ds.trajectories.front().obs_width() != rc.arch.d_in() ||
        ds.trajectories.front().d_act != rc.arch.d_act)
        throw grq::validation_error("dataset widths (obs " +
                                    std::to_string(ds.trajectories.front().obs_width()) + ", act " +
                                    std::to_string(ds.trajectories.front().d_act) +
                                    ") do not match the configured architecture");

    grq::Trainer trainer(rc.arch, rc.train);
    const json resolved = rc.resolved();
    double last_loss = std::numeric_limits<double>::quiet_NaN();
    const std::int64_t report_every = std::max<std::int64_t>(1, rc.train.epochs / 20);
    try {
        for (std::int64_t e = 1; e <= rc.train.epochs; ++e) {
            grq::EpochMetrics met = trainer.run_epoch(ds.trajectories);
            last_loss = met.loss;
            emit({{"event", "epoch"},
                  {"epoch", met.epoch},
                  {"loss", met.loss},
                  {"updates", met.updates},
                  {"seq_length", met.seq_length},
                  {"valid_fraction", met.valid_fraction}});
            if (e % report_every == 0 || e == rc.train.epochs)
                std::cerr << "epoch " << e << "/" << rc.train.epochs << "  loss " << met.loss << "\n";
        }
    } catch (const grq::numeric_error& e) {
        const std::string failed = out_path + ".failed";
        grq::save_checkpoint(failed, rc.arch, trainer.params(),
                             {{"command", "train"},
                              {"status", "failed"},
                              {"error", e.what()},
                              {"seed", rc.train.seed},
                              {"dataset", dataset_path},
                              {"trained_epochs", trainer.epochs_done()},
                              {"config", resolved}});
        emit({{"event", "training_failed"}, {"error", e.what()}, {"checkpoint", failed}});
        std::cerr << "training aborted: " << e.what() << "\n";
        return 4;
    }

    grq::save_checkpoint(out_path, rc.arch, trainer.params(),
                         {{"command", "train"},
                          {"status", "ok"},
                          {"seed", rc.train.seed},
                          {"dataset", dataset_path},
                          {"trained_epochs", trainer.epochs_done()},
                          {"final_loss", last_loss},
                          {"config", resolved}});
    emit({{"event", "checkpoint"},
          {"path", out_path},
          {"trained_epochs", trainer.epochs_done()},
          {"final_loss", last_loss}});
    std::cerr << "saved checkpoint to " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_path) {
    grq::Checkpoint ck = grq::load_checkpoint(ckpt_path);
    grq::Dataset ds = grq::load_dataset(dataset_path);
    grq::EvalReport rep = grq::evaluate(ck.arch, ck.params, ds.trajectories);
    json per = json::object();
    for (const auto& [name, mae] : rep.per_morphology) per[name] = mae;
    emit({{"event", "eval"},
          {"checkpoint", ckpt_path},
          {"dataset", dataset_path},
          {"mae", rep.mae},
          {"steps", rep.steps},
          {"per_morphology", per}});
    std::cerr << "mae " << rep.mae << " over " << rep.steps << " steps\n";
    return 0;
}

int cmd_bench(const std::string& ckpt_path, std::int64_t steps, std::int64_t warmup,
              std::uint64_t seed) {
    grq::Checkpoint ck = grq::load_checkpoint(ckpt_path);
    if (warmup < 0) warmup = ck.arch.window + 100;
    grq::LatencyReport rep = grq::bench(ck.arch, ck.params, steps, warmup, seed);
    emit({{"event", "bench"},
          {"checkpoint", ckpt_path},
          {"steps", rep.steps},
          {"warmup", rep.warmup},
          {"mean_us", rep.mean_us},
          {"p50_us", rep.p50_us},
          {"p99_us", rep.p99_us},
          {"max_us", rep.max_us},
          {"steady_allocs", rep.steady_allocs},
          {"alloc_probe_active", rep.alloc_probe_active}});
    std::cerr << "p50 " << rep.p50_us << "us  p99 " << rep.p99_us << "us  max " << rep.max_us
              << "us  allocs " << rep.steady_allocs << "\n";
    return 0;
}

int cmd_export_attention(const std::string& ckpt_path, const std::string& dataset_path,
                         const std::string& out_csv, const std::string& summary_json,
                         std::int64_t traj_index) {
    grq::Checkpoint ck = grq::load_checkpoint(ckpt_path);
    grq::Dataset ds = grq::load_dataset(dataset_path);
    if (traj_index < 0 || std::size_t(traj_index) >= ds.trajectories.size())
        throw grq::validation_error("--traj index out of range");
    const json prov{{"command", "export-attention"},
                    {"checkpoint", ckpt_path},
                    {"dataset", dataset_path},
                    {"traj", traj_index}};
    grq::AttentionTrace tr = grq::export_attention(ck.arch, ck.params,
                                                   ds.trajectories[std::size_t(traj_index)], out_csv,
                                                   prov, summary_json);
    auto pooled = [&](const grq::Tensor& m) {
        std::vector<double> v(std::size_t(ck.arch.window), 0.0);
        for (int h = 0; h < ck.arch.n_heads; ++h)
            for (std::int64_t i = 0; i < ck.arch.window; ++i) v[std::size_t(i)] += m(h, i);
        for (double& x : v) x /= double(ck.arch.n_heads);
        return grq::chi_square_uniform(v, tr.samples);
    };
    const grq::ChiSquareResult co = pooled(tr.obs_mean);
    const grq::ChiSquareResult cg = pooled(tr.gru_mean);
    emit({{"event", "attention"},
          {"csv", out_csv},
          {"samples", tr.samples},
          {"obs_chi2", co.stat},
          {"obs_p", co.p_value},
          {"gru_chi2", cg.stat},
          {"gru_p", cg.p_value}});
    std::cerr << "attention means over " << tr.samples << " steps -> " << out_csv << "\n";
    return 0;
}

int cmd_export_residuals(const std::string& ckpt_path, const std::string& dataset_path,
                         const std::string& out_csv, const std::string& summary_json,
                         const std::string& tag) {
    grq::Checkpoint ck = grq::load_checkpoint(ckpt_path);
    grq::Dataset ds = grq::load_dataset(dataset_path);
    const json prov{{"command", "export-residuals"},
                    {"checkpoint", ckpt_path},
                    {"dataset", dataset_path},
                    {"step_tag", tag}};
    grq::ResidualSummary sum = grq::export_residuals(ck.arch, ck.params, ds.trajectories, tag,
                                                     out_csv, summary_json, prov);
    emit({{"event", "residuals"},
          {"csv", out_csv},
          {"summary", summary_json},
          {"step_tag", tag},
          {"rows_per_joint", sum.rows_per_joint},
          {"pooled_variance", sum.pooled_variance}});
    std::cerr << "residuals (" << tag << ") -> " << out_csv << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recurrent-attention locomotion policy toolkit"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args;
    std::string gen_out, train_dataset, train_out;
    std::string eval_ckpt, eval_dataset;
    std::string bench_ckpt;
    std::int64_t bench_steps = 2000, bench_warmup = -1;
    std::uint64_t bench_seed = 1234;
    std::string attn_ckpt, attn_dataset, attn_csv, attn_json;
    std::int64_t attn_traj = 0;
    std::string res_ckpt, res_dataset, res_csv, res_json, res_tag = "final";

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic gait dataset");
    add_common(gen, gen_args);
    gen->add_option("--out", gen_out, "output dataset path")->required();

    CLI::App* train = app.add_subcommand("train", "train a policy on a dataset");
    add_common(train, train_args);
    train->add_option("--dataset", train_dataset, "input dataset path")->required();
    train->add_option("--out", train_out, "output checkpoint path")->required();

    CLI::App* eval = app.add_subcommand("eval", "action error of a checkpoint on a dataset");
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--dataset", eval_dataset, "dataset path")->required();

    CLI::App* bench = app.add_subcommand("bench", "single-step inference latency");
    bench->add_option("--checkpoint", bench_ckpt, "checkpoint path")->required();
    bench->add_option("--steps", bench_steps, "timed steps (default 2000)");
    bench->add_option("--warmup", bench_warmup, "untimed warmup steps (default window+100)");
    bench->add_option("--seed", bench_seed, "observation stream seed");

    CLI::App* attn = app.add_subcommand("export-attention", "mean attention weights per position");
    attn->add_option("--checkpoint", attn_ckpt, "checkpoint path")->required();
    attn->add_option("--dataset", attn_dataset, "dataset path")->required();
    attn->add_option("--out", attn_csv, "output CSV path")->required();
    attn->add_option("--summary", attn_json, "optional JSON summary path");
    attn->add_option("--traj", attn_traj, "trajectory index to roll out (default 0)");

    CLI::App* res = app.add_subcommand("export-residuals", "per-joint prediction residuals");
    res->add_option("--checkpoint", res_ckpt, "checkpoint path")->required();
    res->add_option("--dataset", res_dataset, "dataset path")->required();
    res->add_option("--out", res_csv, "output CSV path")->required();
    res->add_option("--summary", res_json, "optional JSON summary path");
    res->add_option("--tag", res_tag, "step tag recorded on every row (default 'final')");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args, gen_out);
        if (train->parsed()) return cmd_train(train_args, train_dataset, train_out);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_dataset);
        if (bench->parsed()) return cmd_bench(bench_ckpt, bench_steps, bench_warmup, bench_seed);
        if (attn->parsed())
            return cmd_export_attention(attn_ckpt, attn_dataset, attn_csv, attn_json, attn_traj);
        if (res->parsed())
            return cmd_export_residuals(res_ckpt, res_dataset, res_csv, res_json, res_tag);
    } catch (const grq::validation_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const grq::dimension_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const grq::format_error& e) {
        std::cerr << "data error (" << grq::to_string(e.kind) << "): " << e.what() << "\n";
        return 3;
    } catch (const grq::contract_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const grq::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

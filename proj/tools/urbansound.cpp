// Copyright 2026 The urbansound Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// urbansound: command-line front end for the sensor node, coordinator and tooling.

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "urbansound/coordinator.hpp"
#include "urbansound/evalprep.hpp"
#include "urbansound/node.hpp"
#include "urbansound/report.hpp"
#include "urbansound/synth.hpp"

using namespace urbansound;
namespace fs = std::filesystem;

namespace {

Timestamp parse_time(const std::string& text, const char* what) {
  const auto t = parse_rfc3339(text);
  if (!t) throw ConfigError(std::string(what) + ": expected RFC 3339 time, got '" + text + "'");
  return *t;
}

int parse_class(const std::string& text) {
  if (const auto k = class_index(text)) return *k;
  try {
    std::size_t used = 0;
    const int k = std::stoi(text, &used);
    if (used == text.size() && k >= 0 && k < kNumClasses) return k;
  } catch (const std::exception&) {
  }
  throw ConfigError("unknown class '" + text + "'");
}

doa::ArrayGeometry geometry_or_default(const std::string& path) {
  return path.empty() ? doa::ArrayGeometry::concentric() : doa::ArrayGeometry::load(path);
}

/// Blocks SIGINT/SIGTERM in every thread started afterwards; wait_for_signal() collects them.
sigset_t block_termination() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

// ---- node ------------------------------------------------------------------

struct NodeArgs {
  std::string input, mode = "array7", coordinator, node_id = "node", geometry, spool_dir, model, start_time,
              emit = "onset";
  double calibration_db = 94.0, gate_db = 45.0;
  bool realtime = false;
};

int run_node(const NodeArgs& a) {
  node::NodeConfig cfg;
  cfg.node_id = a.node_id;
  cfg.mic_mode = node::parse_mic_mode(a.mode);
  cfg.calibration.full_scale_spl_db = a.calibration_db;
  cfg.geometry = geometry_or_default(a.geometry);
  if (cfg.mic_mode == node::MicMode::Single && cfg.geometry.mics.size() != 1) cfg.geometry.mics.resize(1);
  cfg.activity_gate_db = a.gate_db;
  cfg.realtime = a.realtime;
  if (a.emit == "every") {
    cfg.emit = node::EmitPolicy::EveryFrame;
  } else if (a.emit != "onset") {
    throw ConfigError("--emit must be onset or every");
  }
  cfg.model = std::make_shared<const classify::BaselineModel>(classify::load_model(a.model));
  if (!a.start_time.empty()) cfg.start = parse_time(a.start_time, "--start-time");

  PcmAudio audio;
  if (fs::path(a.input).extension() == ".json") {
    const auto spec = synth::load_scene(a.input);
    audio = synth::synth_scene(spec, geometry_or_default(a.geometry), cfg.calibration).audio;
    if (spec.start && a.start_time.empty()) cfg.start = *spec.start;
  } else {
    audio = read_wav(a.input);
  }
  if (cfg.mic_mode == node::MicMode::Single && audio.channels != 1) audio = node::mono_channel(audio);

  if (!a.coordinator.empty()) {
    node::PublisherConfig pub;
    pub.endpoint = net::parse_endpoint(a.coordinator);
    if (!a.spool_dir.empty()) pub.spool_file = fs::path(a.spool_dir) / (cfg.node_id + ".jsonl");
    cfg.publisher = pub;
  }
  node::Pipeline pipeline(cfg, std::make_unique<node::PcmSource>(std::move(audio)));
  pipeline.on_record([](const MetadataRecord& r) { std::cout << serialize(r) << '\n' << std::flush; });
  const auto report = pipeline.run();
  std::clog << "node " << cfg.node_id << ": " << report.frames_processed << " frames, " << report.frames_dropped
            << " dropped, " << report.records.size() << " records, " << report.restarts << " restarts";
  if (cfg.publisher)
    std::clog << ", " << report.delivery.acked << " acked, " << report.delivery.rejected << " rejected, "
              << report.delivery.spooled << " spooled";
  std::clog << '\n';
  for (const auto& why : report.delivery.rejections) std::clog << "  rejected: " << why << '\n';
  return report.fatal ? 3 : 0;
}

// ---- coordinator -----------------------------------------------------------

struct CoordinatorArgs {
  std::string listen = "0.0.0.0:5050", store_dir, classlut;
  double snapshot_interval_s = 600.0;
  int azimuth_resolution = 10;
};

int run_coordinator(const CoordinatorArgs& a) {
  const auto signals = block_termination();
  ClassLut lut;
  if (!a.classlut.empty()) {
    std::ifstream in(a.classlut);
    if (!in) throw ConfigError("cannot read " + a.classlut);
    lut = ClassLut::from_json(nlohmann::json::parse(in));
  }
  if (!(a.snapshot_interval_s > 0.0)) throw ConfigError("--snapshot-interval-s must be positive");
  coordinator::StoreConfig sc;
  sc.dir = a.store_dir;
  sc.rules.azimuth_resolution_deg = a.azimuth_resolution;
  coordinator::Store store(sc);
  coordinator::ServerConfig cfg;
  cfg.listen = net::parse_endpoint(a.listen);
  cfg.snapshot_interval = std::chrono::milliseconds(std::llround(a.snapshot_interval_s * 1000.0));
  coordinator::Server server(store, cfg);
  server.start();
  std::clog << "coordinator: listening on " << cfg.listen.host << ':' << server.port() << ", " << store.size()
            << " records loaded\n";
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  std::map<int, std::size_t> per_class;
  for (const auto& s : store.records()) ++per_class[s.record.class_index];
  std::clog << "coordinator: " << store.size() << " records, " << store.rejected() << " rejected, "
            << store.duplicates() << " duplicates\n";
  for (const auto& [k, n] : per_class) std::clog << "  " << lut.label(k) << ": " << n << '\n';
  return 0;
}

// ---- query -----------------------------------------------------------------

struct QueryArgs {
  std::string store_dir, from, to, cls, node, period = "hour", format = "json";
};

int run_query(const QueryArgs& a) {
  if (a.format != "json" && a.format != "csv") throw ConfigError("--format must be json or csv");
  const auto from = parse_time(a.from, "--from");
  const auto to = parse_time(a.to, "--to");
  std::optional<int> cls;
  if (!a.cls.empty()) cls = parse_class(a.cls);
  std::optional<std::string> node;
  if (!a.node.empty()) node = a.node;

  if (a.period == "raw") {
    if (to < from || to - from > std::chrono::hours{24}) throw ConfigError("raw query range must be bounded to 24 h");
    if (a.format == "csv") std::cout << "ingest_seq,node_id,class_index,class,spl,laeq,azimuth,timestamp\n";
    for (const auto& s : coordinator::load_raw(a.store_dir)) {
      const auto& r = s.record;
      if (r.timestamp < from || r.timestamp >= to || (node && r.node_id != *node) || (cls && r.class_index != *cls))
        continue;
      if (a.format == "json") {
        std::cout << coordinator::to_json(s).dump() << '\n';
      } else {
        std::cout << s.ingest_seq << ',' << r.node_id << ',' << r.class_index << ',' << class_label(r.class_index)
                  << ',' << r.spl << ',' << r.laeq << ',' << (r.azimuth ? std::to_string(*r.azimuth) : "") << ','
                  << format_rfc3339(r.timestamp) << '\n';
      }
    }
    return 0;
  }
  coordinator::AggregateQuery q;
  q.kind = coordinator::parse_period(a.period);
  q.from = from;
  q.to = to;
  q.node_id = node;
  q.class_index = cls;
  const auto rows = coordinator::select_aggregates(coordinator::load_aggregates(a.store_dir, q.kind), q);
  if (a.format == "csv") {
    std::cout << coordinator::aggregates_csv(rows);
  } else {
    for (const auto& row : rows) std::cout << coordinator::to_json(row).dump() << '\n';
  }
  return 0;
}

// ---- report ----------------------------------------------------------------

struct ReportArgs {
  std::string store_dir, node, kind = "spl", from, to, out;
  std::vector<std::string> classes;
};

int run_report(const ReportArgs& a) {
  const auto from = parse_time(a.from, "--from");
  report::Report r;
  if (a.kind == "spl" || a.kind == "dist") {
    const auto rows = coordinator::load_aggregates(a.store_dir, coordinator::PeriodKind::Hour);
    r = a.kind == "spl" ? report::spl_report(rows, a.node, from) : report::class_distribution_report(rows, a.node, from);
  } else if (a.kind == "locality") {
    if (a.to.empty()) throw ConfigError("--to is required for a locality plot");
    report::LocalityPlotSpec spec;
    spec.node_id = a.node;
    spec.from = from;
    spec.to = parse_time(a.to, "--to");
    if (!a.classes.empty()) {
      spec.classes.clear();
      for (const auto& c : a.classes) spec.classes.push_back(parse_class(c));
    }
    r = report::locality_plot(coordinator::load_raw(a.store_dir), spec);
    if (r.excluded > 0) std::clog << "report: " << r.excluded << " record(s) without azimuth excluded\n";
  } else {
    throw ConfigError("--kind must be spl, dist or locality");
  }
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  report::write_report(r, a.out);
  std::clog << "report: wrote " << a.out << ".svg and " << a.out << ".csv\n";
  return 0;
}

// ---- dataset, training and evaluation ---------------------------------------

int run_prep(const std::string& ann_dir, const std::string& audio_dir, std::uint64_t seed, const std::string& out) {
  const auto recs = evalprep::load_annotations(ann_dir, audio_dir);
  const auto manifest = evalprep::build_manifest(recs, {}, seed);
  write_text(out, evalprep::to_json(manifest).dump(2) + "\n");
  std::clog << "prep: " << recs.size() << " recordings, " << manifest.of(evalprep::Split::Train).size() << " train, "
            << manifest.of(evalprep::Split::Val).size() << " val, " << manifest.of(evalprep::Split::Test).size()
            << " test samples\n";
  return 0;
}

evalprep::DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  return evalprep::manifest_from_json(nlohmann::json::parse(in));
}

int run_train(const std::string& manifest, const std::string& out) {
  const auto model = evalprep::train_from_manifest(read_manifest(manifest), evalprep::file_loader());
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  classify::save_model(out, model);
  std::clog << "train: wrote " << out << '\n';
  return 0;
}

int run_eval(const std::string& model_path, const std::string& manifest, const std::string& split,
             const std::string& out_dir) {
  const auto model = classify::load_model(model_path);
  const auto ev =
      evalprep::evaluate(model, read_manifest(manifest), evalprep::parse_split(split), evalprep::file_loader());
  evalprep::write_evaluation(out_dir, ev);
  std::cout << evalprep::to_json(ev.report).dump(2) << '\n';
  for (const auto& m : ev.report.missing_audio) std::clog << "eval: missing audio " << m << '\n';
  return 0;
}

// ---- synthesis -------------------------------------------------------------

int run_synth(const std::string& spec_path, const std::string& out_dir, const std::string& geometry) {
  const auto spec = synth::load_scene(spec_path);
  const auto scene = synth::synth_scene(spec, geometry_or_default(geometry));
  const auto stem = fs::path(spec_path).stem().string();
  synth::write_scene(scene, out_dir, stem);
  std::clog << "synth: wrote " << (fs::path(out_dir) / (stem + ".wav")).string() << " and " << stem
            << ".truth.json\n";
  return 0;
}

int run_synth_corpus(const std::string& out_dir, int per_class, std::uint64_t seed) {
  synth::CorpusConfig cfg;
  cfg.per_class = per_class;
  cfg.seed = seed;
  auto corpus = synth::synth_corpus(cfg);
  synth::write_corpus(corpus, out_dir);
  std::clog << "synth-corpus: " << corpus.size() << " recordings under " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Urban sound monitoring: sensor node, coordinator, dataset and report tools"};
  app.require_subcommand(1);

  NodeArgs node;
  auto* n = app.add_subcommand("node", "Run a sensor node over a WAV file or a synthetic scene spec");
  n->add_option("--input", node.input, "WAV recording or scene spec (.json)")->required()->check(CLI::ExistingFile);
  n->add_option("--mode", node.mode, "single|array7")->capture_default_str();
  n->add_option("--coordinator", node.coordinator, "host:port; records go only to stdout when omitted");
  n->add_option("--node-id", node.node_id)->capture_default_str();
  n->add_option("--calibration-db", node.calibration_db, "dB SPL of a full-scale 1 kHz sine")->capture_default_str();
  n->add_option("--geometry", node.geometry, "array geometry JSON")->check(CLI::ExistingFile);
  n->add_option("--spool-dir", node.spool_dir, "where undeliverable records are spooled");
  n->add_option("--model", node.model, "trained model file")->required()->check(CLI::ExistingFile);
  n->add_option("--activity-gate-db", node.gate_db)->capture_default_str();
  n->add_option("--start-time", node.start_time, "RFC 3339 time of the first sample");
  n->add_option("--emit", node.emit, "onset|every")->capture_default_str();
  n->add_flag("--realtime", node.realtime, "pace capture at the audio rate");

  CoordinatorArgs coord;
  auto* c = app.add_subcommand("coordinator", "Collect records from nodes and maintain aggregates");
  c->add_option("--listen", coord.listen, "host:port")->capture_default_str();
  c->add_option("--store-dir", coord.store_dir)->required();
  c->add_option("--snapshot-interval-s", coord.snapshot_interval_s)->capture_default_str();
  c->add_option("--classlut", coord.classlut, "class look-up table JSON")->check(CLI::ExistingFile);
  c->add_option("--azimuth-resolution", coord.azimuth_resolution, "degrees")->capture_default_str();

  QueryArgs query;
  auto* q = app.add_subcommand("query", "Query aggregates or raw records from a store directory");
  q->add_option("--store-dir", query.store_dir)->required()->check(CLI::ExistingDirectory);
  q->add_option("--from", query.from, "RFC 3339, inclusive")->required();
  q->add_option("--to", query.to, "RFC 3339, exclusive")->required();
  q->add_option("--class", query.cls, "label or index");
  q->add_option("--node", query.node);
  q->add_option("--period", query.period, "hour|day|week|month|raw")->capture_default_str();
  q->add_option("--format", query.format, "json|csv")->capture_default_str();

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Render SPL, class distribution or locality plots");
  r->add_option("--store-dir", rep.store_dir)->required()->check(CLI::ExistingDirectory);
  r->add_option("--node", rep.node)->required();
  r->add_option("--kind", rep.kind, "spl|dist|locality")->capture_default_str();
  r->add_option("--from", rep.from, "RFC 3339; spl and dist plot the UTC day containing it")->required();
  r->add_option("--to", rep.to, "RFC 3339, exclusive (locality)");
  r->add_option("--classes", rep.classes, "locality classes, innermost ring first");
  r->add_option("--out", rep.out, "output prefix")->required();

  std::string ann_dir, audio_dir, manifest_out;
  std::uint64_t prep_seed = 0;
  auto* p = app.add_subcommand("prep", "Segment annotated recordings into a dataset manifest");
  p->add_option("--annotations-dir", ann_dir)->required()->check(CLI::ExistingDirectory);
  p->add_option("--audio-dir", audio_dir)->required()->check(CLI::ExistingDirectory);
  p->add_option("--seed", prep_seed)->capture_default_str();
  p->add_option("--out", manifest_out)->required();

  std::string train_manifest, train_out;
  auto* t = app.add_subcommand("train", "Train the baseline classifier from a manifest");
  t->add_option("--manifest", train_manifest)->required()->check(CLI::ExistingFile);
  t->add_option("--out", train_out)->required();

  std::string eval_model, eval_manifest, eval_split = "test", eval_out;
  auto* e = app.add_subcommand("eval", "Evaluate a model on one split of a manifest");
  e->add_option("--model", eval_model)->required()->check(CLI::ExistingFile);
  e->add_option("--manifest", eval_manifest)->required()->check(CLI::ExistingFile);
  e->add_option("--split", eval_split, "train|val|test")->capture_default_str();
  e->add_option("--out-dir", eval_out)->required();

  std::string synth_spec, synth_out, synth_geometry;
  auto* s = app.add_subcommand("synth", "Render a scene spec to WAV plus ground truth");
  s->add_option("--spec", synth_spec)->required()->check(CLI::ExistingFile);
  s->add_option("--out-dir", synth_out)->required();
  s->add_option("--geometry", synth_geometry, "array geometry JSON")->check(CLI::ExistingFile);

  std::string corpus_out;
  int per_class = 1;
  std::uint64_t corpus_seed = 0;
  auto* sc = app.add_subcommand("synth-corpus", "Write a labelled synthetic corpus for prep/train/eval");
  sc->add_option("--out-dir", corpus_out)->required();
  sc->add_option("--per-class", per_class)->capture_default_str();
  sc->add_option("--seed", corpus_seed)->capture_default_str();

  std::string lut_out;
  auto* tx = app.add_subcommand("taxonomy", "Export the class look-up table as JSON");
  tx->add_option("--out", lut_out, "file; stdout when omitted");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*n) return run_node(node);
    if (*c) return run_coordinator(coord);
    if (*q) return run_query(query);
    if (*r) return run_report(rep);
    if (*p) return run_prep(ann_dir, audio_dir, prep_seed, manifest_out);
    if (*t) return run_train(train_manifest, train_out);
    if (*e) return run_eval(eval_model, eval_manifest, eval_split, eval_out);
    if (*s) return run_synth(synth_spec, synth_out, synth_geometry);
    if (*sc) return run_synth_corpus(corpus_out, per_class, corpus_seed);
    if (*tx) {
      const auto text = taxonomy_json().dump(2) + "\n";
      if (lut_out.empty()) {
        std::cout << text;
      } else {
        write_text(lut_out, text);
      }
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}

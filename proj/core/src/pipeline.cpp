#include "factsum/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "factsum/checkpoint.hpp"
#include "factsum/error.hpp"
#include "factsum/jsonl.hpp"
#include "factsum/knowledge.hpp"
#include "factsum/metrics.hpp"
#include "factsum/text.hpp"

namespace factsum {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Config parsing

class Section {
 public:
  Section(const Json& parent, std::string name) : name_(std::move(name)) {
    if (auto it = parent.find(name_); it != parent.end()) {
      if (!it->is_object()) throw Error(ErrorKind::kConfig, "config: \"" + name_ + "\" must be an object");
      obj_ = *it;
    } else {
      obj_ = Json::object();
    }
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [key, value] : obj_.items()) {
      if (!ok.count(key)) throw Error(ErrorKind::kConfig, "config: unknown key \"" + name_ + "." + key + "\"");
    }
  }

  template <typename T>
  void get(const char* key, T& out) const {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer()) throw Error(ErrorKind::kConfig, "expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw Error(ErrorKind::kConfig, "expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw Error(ErrorKind::kConfig, "expected a boolean");
      }
      out = it->get<T>();
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kConfig, "config: " + name_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }

 private:
  std::string name_;
  Json obj_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw Error(ErrorKind::kIo, what + " not found: " + path.string());
}

// ---------------------------------------------------------------------------
// Workdir artifacts

fs::path prepare_dir(const RunConfig& c) { return c.workdir / "prepare"; }
fs::path retrieve_dir(const RunConfig& c) { return c.workdir / "retrieve"; }
fs::path train_dir(const RunConfig& c, GuidanceMode m) { return c.workdir / "train" / std::string(to_string(m)); }

std::string run_label(GuidanceMode mode, bool with_entities) {
  if (mode == GuidanceMode::kVanilla) return "vanilla";
  return std::string(to_string(mode)) + (with_entities ? ".with-entities" : ".no-entities");
}

fs::path require_artifact(const RunConfig& c, const fs::path& path, const char* stage) {
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorKind::kIo, "missing artifact " + fs::relative(path, c.workdir).generic_string() +
                                    " (run the " + stage + " command first)");
  }
  return path;
}

std::string checksum(const fs::path& path) { return hex64(fnv1a64(read_text_file(path))); }

std::string rel(const RunConfig& c, const fs::path& p) {
  return p.lexically_relative(c.workdir).generic_string();
}

void write_manifest(const RunConfig& c, const std::string& command, const fs::path& dir,
                    const std::vector<std::pair<std::string, fs::path>>& inputs,
                    std::vector<fs::path>& outputs, const Json& summary) {
  Json in = Json::object();
  for (const auto& [name, path] : inputs) in[name] = checksum(path);
  Json out = Json::object();
  for (const fs::path& p : outputs) out[rel(c, p)] = checksum(p);
  Json manifest = {{"command", command},
                   {"config", c.to_json()},
                   {"inputs", in},
                   {"outputs", out},
                   {"summary", summary}};
  fs::path path = dir / "manifest.json";
  write_json_file(path, manifest);
  outputs.push_back(path);
}

std::vector<std::pair<std::string, fs::path>> config_inputs(const RunConfig& c, bool facts) {
  std::vector<std::pair<std::string, fs::path>> in{{"corpus", c.corpus}, {"gazetteer", c.gazetteer}};
  if (facts) in.emplace_back("facts", c.facts);
  return in;
}

Json document_record(const Document& d) {
  Json sentences = Json::array();
  for (const Sentence& s : d.sentences) sentences.push_back(join_tokens(s.tokens));
  Json rec = {{"id", d.id}, {"sentences", sentences}};
  if (d.summary) {
    Json summary = Json::array();
    for (const Sentence& s : *d.summary) summary.push_back(join_tokens(s.tokens));
    rec["summary"] = summary;
  }
  if (!d.meta.empty()) rec["meta"] = d.meta;
  return rec;
}

struct Prepared {
  Corpus documents;
  Corpus pseudo;
  Splits splits;
  std::unordered_map<std::string, const Document*> by_id;
};

Prepared load_prepared(const RunConfig& c, const Gazetteer& gaz) {
  Prepared p;
  fs::path dir = prepare_dir(c);
  for (Document& d : ingest_corpus(require_artifact(c, dir / "documents.jsonl", "prepare"))) {
    p.documents.push_back(recognize_entities(std::move(d), gaz));
  }
  fs::path pseudo = require_artifact(c, dir / "pseudo_documents.jsonl", "prepare");
  if (fs::file_size(pseudo) > 0) {
    for (Document& d : ingest_corpus(pseudo)) p.pseudo.push_back(recognize_entities(std::move(d), gaz));
  }
  Json s = read_json_file(require_artifact(c, dir / "splits.json", "prepare"));
  p.splits.train = s.at("train").get<std::vector<std::string>>();
  p.splits.val = s.at("val").get<std::vector<std::string>>();
  p.splits.test = s.at("test").get<std::vector<std::string>>();
  for (const Document& d : p.documents) p.by_id.emplace(d.id, &d);
  for (const Document& d : p.pseudo) p.by_id.emplace(d.id, &d);
  return p;
}

const Document& lookup(const Prepared& p, const std::string& id) {
  auto it = p.by_id.find(id);
  if (it == p.by_id.end()) throw Error(ErrorKind::kInvalidInput, "unknown document id " + id);
  return *it->second;
}

std::map<std::string, GuidanceBundle> load_guidance(const fs::path& path, const FactStore& store) {
  std::map<std::string, GuidanceBundle> out;
  for (GuidanceBundle& b : read_guidance(path, store)) {
    std::string id = b.doc_id;
    out.emplace(std::move(id), std::move(b));
  }
  return out;
}

const GuidanceBundle& bundle_for(const std::map<std::string, GuidanceBundle>& g, const std::string& id) {
  auto it = g.find(id);
  if (it == g.end()) throw Error(ErrorKind::kInvalidInput, "no guidance for document " + id);
  return it->second;
}

// Retrieval into `dir`; shared by retrieve and ablate.
void run_retrieval(const RunConfig& c, int k, const fs::path& out_path, Json& summary) {
  const Gazetteer gaz = Gazetteer::load(c.gazetteer);
  const FactStore store = FactStore::load(c.facts);
  const HashEmbedder emb = c.embedder();
  const FactIndex index = FactIndex::build(store, emb);
  Prepared p = load_prepared(c, gaz);
  std::vector<GuidanceBundle> bundles;
  std::size_t with_facts = 0;
  for (const Corpus* set : {&p.documents, &p.pseudo}) {
    for (const Document& d : *set) {
      bundles.push_back(retrieve_guidance(d, store, index, gaz, emb, k));
      with_facts += bundles.back().facts.empty() ? 0 : 1;
    }
  }
  write_guidance(out_path, bundles);
  summary = {{"k", k}, {"bundles", bundles.size()}, {"bundles_with_facts", with_facts}};
}

struct TrainingRun {
  TrainResult result;
  Json summary;
};

TrainingRun run_training(const RunConfig& c, const TrainConfig& tc, const fs::path& guidance_path,
                         const fs::path& ckpt_path, const fs::path& csv_path) {
  const Gazetteer gaz = Gazetteer::load(c.gazetteer);
  Prepared p = load_prepared(c, gaz);
  std::map<std::string, GuidanceBundle> guidance;
  if (tc.mode != GuidanceMode::kVanilla) {
    const FactStore store = FactStore::load(c.facts);
    guidance = load_guidance(require_artifact(c, guidance_path, "retrieve"), store);
  }
  auto segments = [&](const std::string& id) -> std::optional<GuidanceSegments> {
    if (tc.mode == GuidanceMode::kVanilla) return std::nullopt;
    return segments_from(bundle_for(guidance, id), gaz, tc.mode);
  };

  std::map<std::string, int> counts;
  for (const std::string& id : p.splits.train) {
    auto seg = segments(id);
    count_tokens(lookup(p, id), seg ? &*seg : nullptr, counts);
  }
  Vocabulary vocab = Vocabulary::build(counts, c.min_count);
  ModelConfig mc = c.model;
  mc.vocab_size = vocab.size();

  auto examples = [&](const std::vector<std::string>& ids) {
    std::vector<TrainExample> out;
    for (const std::string& id : ids) {
      auto seg = segments(id);
      out.push_back(make_example(lookup(p, id), seg ? &*seg : nullptr, vocab, mc));
    }
    return out;
  };
  std::vector<TrainExample> train_set = examples(p.splits.train);
  std::vector<TrainExample> val_set = examples(p.splits.val);

  TrainingRun run;
  run.result = train(train_set, val_set, mc, tc, vocab,
                     [&](const Checkpoint& best) { save_checkpoint(ckpt_path, best); });
  write_loss_csv(csv_path, run.result.curve);
  run.summary = {{"mode", std::string(to_string(tc.mode))},
                 {"vocab_size", vocab.size()},
                 {"train_examples", train_set.size()},
                 {"val_examples", val_set.size()},
                 {"epochs_run", run.result.epochs_run},
                 {"best_epoch", run.result.best_epoch},
                 {"best_val_loss", run.result.curve.at(static_cast<std::size_t>(run.result.best_epoch - 1)).val_loss}};
  return run;
}

// Decodes the test split and the pseudo-documents.
std::pair<std::vector<Prediction>, std::vector<Prediction>> run_summarize(
    const RunConfig& c, const Checkpoint& ckpt, bool with_entities, const fs::path& guidance_path) {
  const Gazetteer gaz = Gazetteer::load(c.gazetteer);
  Prepared p = load_prepared(c, gaz);
  std::map<std::string, GuidanceBundle> guidance;
  const bool guided = with_entities && ckpt.mode != GuidanceMode::kVanilla;
  if (guided) {
    const FactStore store = FactStore::load(c.facts);
    guidance = load_guidance(require_artifact(c, guidance_path, "retrieve"), store);
  }
  auto predict = [&](const Document& d) {
    std::optional<GuidanceSegments> seg;
    if (guided) seg = segments_from(bundle_for(guidance, d.id), gaz, ckpt.mode);
    return Prediction{d.id, summarize(ckpt, d.tokens(), seg ? &*seg : nullptr, c.decode)};
  };
  std::vector<Prediction> test;
  for (const std::string& id : p.splits.test) test.push_back(predict(lookup(p, id)));
  std::vector<Prediction> pseudo;
  for (const Document& d : p.pseudo) pseudo.push_back(predict(d));
  return {std::move(test), std::move(pseudo)};
}

Json prf_row(const PRF& p) { return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}}; }

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

Json RunConfig::to_json() const {
  Json model_json = factsum::to_json(model);
  model_json.erase("vocab_size");
  return {
      {"paths", {{"corpus", given.corpus}, {"gazetteer", given.gazetteer}, {"facts", given.facts}, {"workdir", given.workdir}}},
      {"embedder", {{"dim", embed_dim}, {"seed", embed_seed}}},
      {"clustering", {{"tau", tau}}},
      {"split", {{"val_fraction", val_fraction}, {"test_fraction", test_fraction}}},
      {"model", model_json},
      {"train",
       {{"epochs", train.epochs},
        {"lr", train.lr},
        {"batch_size", train.batch_size},
        {"patience", train.patience},
        {"seed", train.seed},
        {"mode", std::string(factsum::to_string(train.mode))},
        {"max_steps", train.max_steps},
        {"min_count", min_count}}},
      {"retrieval", {{"k", k}}},
      {"decode",
       {{"beam_size", decode.beam_size},
        {"alpha", decode.alpha},
        {"max_len", decode.max_len},
        {"trigram_block", decode.trigram_block},
        {"min_len", decode.min_len}}},
      {"metrics", {{"ngram", ngram}}},
      {"ablation", {{"k_list", k_list}}},
  };
}

void RunConfig::validate() const {
  if (embed_dim < 1) throw Error(ErrorKind::kConfig, "embedder.dim must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorKind::kConfig, "clustering.tau must be in [0, 1]");
  if (!(val_fraction > 0.0 && test_fraction > 0.0 && val_fraction + test_fraction < 1.0)) {
    throw Error(ErrorKind::kConfig, "split fractions must be positive and sum below 1");
  }
  if (min_count < 1) throw Error(ErrorKind::kConfig, "train.min_count must be >= 1");
  if (k < 1) throw Error(ErrorKind::kConfig, "retrieval.k must be >= 1");
  ModelConfig m = model;
  m.vocab_size = Vocabulary::kNumSpecial + 1;
  m.validate();
  if (m.max_tgt < 3) throw Error(ErrorKind::kConfig, "model.max_tgt must be >= 3");
  train.validate();
  decode.validate();
  if (ngram.empty()) throw Error(ErrorKind::kConfig, "metrics.ngram must not be empty");
  for (int n : ngram) {
    if (n < 1) throw Error(ErrorKind::kConfig, "metrics.ngram values must be >= 1");
  }
  normalize_k_list(k_list);
}

RunConfig parse_run_config(const Json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    static const std::set<std::string> top{"paths", "embedder", "clustering", "split", "model",
                                           "train", "retrieval", "decode", "metrics", "ablation"};
    if (!top.count(key)) throw Error(ErrorKind::kConfig, "config: unknown key \"" + key + "\"");
  }
  RunConfig c;

  Section paths(j, "paths");
  paths.allow({"corpus", "gazetteer", "facts", "workdir"});
  for (const char* key : {"corpus", "gazetteer", "facts", "workdir"}) {
    if (!paths.has(key)) throw Error(ErrorKind::kConfig, std::string("config: missing paths.") + key);
  }
  paths.get("corpus", c.given.corpus);
  paths.get("gazetteer", c.given.gazetteer);
  paths.get("facts", c.given.facts);
  paths.get("workdir", c.given.workdir);

  Section emb(j, "embedder");
  emb.allow({"dim", "seed"});
  emb.get("dim", c.embed_dim);
  emb.get("seed", c.embed_seed);

  Section clus(j, "clustering");
  clus.allow({"tau"});
  clus.get("tau", c.tau);

  Section split(j, "split");
  split.allow({"val_fraction", "test_fraction"});
  split.get("val_fraction", c.val_fraction);
  split.get("test_fraction", c.test_fraction);

  Section model(j, "model");
  model.allow({"d_model", "n_heads", "d_ff", "n_enc_layers", "n_dec_layers", "chunk_len", "max_src",
               "max_tgt", "layer_norm_eps"});
  model.get("d_model", c.model.d_model);
  model.get("n_heads", c.model.n_heads);
  model.get("d_ff", c.model.d_ff);
  model.get("n_enc_layers", c.model.n_enc_layers);
  model.get("n_dec_layers", c.model.n_dec_layers);
  model.get("chunk_len", c.model.chunk_len);
  model.get("max_src", c.model.max_src);
  model.get("max_tgt", c.model.max_tgt);
  model.get("layer_norm_eps", c.model.layer_norm_eps);

  Section train(j, "train");
  train.allow({"epochs", "lr", "batch_size", "patience", "seed", "mode", "max_steps", "min_count"});
  train.get("epochs", c.train.epochs);
  train.get("lr", c.train.lr);
  train.get("batch_size", c.train.batch_size);
  train.get("patience", c.train.patience);
  train.get("seed", c.train.seed);
  train.get("max_steps", c.train.max_steps);
  train.get("min_count", c.min_count);
  if (train.has("mode")) {
    std::string mode;
    train.get("mode", mode);
    try {
      c.train.mode = parse_guidance_mode(mode);
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, std::string("config: train.mode: ") + e.what());
    }
  }

  Section retrieval(j, "retrieval");
  retrieval.allow({"k"});
  retrieval.get("k", c.k);
  c.train.k = c.k;

  Section decode(j, "decode");
  decode.allow({"beam_size", "alpha", "max_len", "trigram_block", "min_len"});
  decode.get("beam_size", c.decode.beam_size);
  decode.get("alpha", c.decode.alpha);
  decode.get("max_len", c.decode.max_len);
  decode.get("trigram_block", c.decode.trigram_block);
  decode.get("min_len", c.decode.min_len);

  Section metrics(j, "metrics");
  metrics.allow({"ngram"});
  metrics.get("ngram", c.ngram);

  Section ablation(j, "ablation");
  ablation.allow({"k_list"});
  ablation.get("k_list", c.k_list);

  c.validate();

  c.corpus = resolve(base_dir, c.given.corpus);
  c.gazetteer = resolve(base_dir, c.given.gazetteer);
  c.facts = resolve(base_dir, c.given.facts);
  c.workdir = resolve(base_dir, c.given.workdir);
  require_file(c.corpus, "corpus file");
  require_file(c.gazetteer, "gazetteer file");
  require_file(c.facts, "facts file");
  if (fs::exists(c.workdir) && !fs::is_directory(c.workdir)) {
    throw Error(ErrorKind::kIo, "workdir is not a directory: " + c.workdir.string());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  Json j;
  try {
    j = read_json_file(path);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kInvalidInput) throw Error(ErrorKind::kConfig, e.what());
    throw;
  }
  fs::path base = path.has_parent_path() ? path.parent_path() : fs::current_path();
  return parse_run_config(j, fs::absolute(base));
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) {
    cfg.embed_seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (o.k) {
    cfg.k = *o.k;
    cfg.train.k = *o.k;
  }
  if (o.mode) cfg.train.mode = *o.mode;
  cfg.validate();
}

Splits split_documents(const Corpus& corpus, double val_fraction, double test_fraction) {
  std::vector<std::pair<std::uint64_t, std::string>> keyed;
  for (const Document& d : corpus) {
    if (d.summary) keyed.emplace_back(fnv1a64(d.id), d.id);
  }
  if (keyed.size() < 3) {
    throw Error(ErrorKind::kInvalidInput,
                "need at least 3 documents with summaries to form train/val/test splits, found " +
                    std::to_string(keyed.size()));
  }
  std::sort(keyed.begin(), keyed.end());
  const auto n = static_cast<double>(keyed.size());
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * val_fraction)));
  std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * test_fraction)));
  while (n_val + n_test >= keyed.size()) {
    if (n_val > 1 && n_val >= n_test) {
      --n_val;
    } else {
      --n_test;
    }
  }
  Splits s;
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    auto& bucket = i < n_val ? s.val : (i < n_val + n_test ? s.test : s.train);
    bucket.push_back(keyed[i].second);
  }
  return s;
}

std::vector<int> normalize_k_list(const std::vector<int>& ks) {
  if (ks.empty()) throw Error(ErrorKind::kConfig, "ablation.k_list must not be empty");
  std::vector<int> out = ks;
  for (int k : out) {
    if (k < 1) throw Error(ErrorKind::kConfig, "ablation k values must be >= 1, got " + std::to_string(k));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string trend_direction(const std::vector<double>& values) {
  if (values.size() < 2) return "flat";
  double d = values.back() - values.front();
  if (std::abs(d) <= 1e-12) return "flat";
  return d > 0 ? "up" : "down";
}

// ---------------------------------------------------------------------------
// Commands

StageResult cmd_prepare(const RunConfig& c) {
  StageResult r{"prepare", {}, {}};
  const Gazetteer gaz = Gazetteer::load(c.gazetteer);
  const HashEmbedder emb = c.embedder();
  Corpus corpus;
  for (Document& d : ingest_corpus(c.corpus)) corpus.push_back(recognize_entities(std::move(d), gaz));

  std::set<std::string> entity_ids;
  for (const Document& d : corpus) {
    for (const std::string& id : d.entity_ids()) entity_ids.insert(id);
  }
  if (entity_ids.empty()) {
    throw Error(ErrorKind::kInvalidInput,
                "no document has an entity mention (" + std::to_string(corpus.size()) +
                    " documents checked against " + std::to_string(gaz.size()) + " gazetteer entries)");
  }
  std::map<std::string, Vector> entity_vectors;
  for (const std::string& id : entity_ids) entity_vectors[id] = embed_entity(gaz, id, emb);
  std::vector<EntityCluster> clusters = cluster_entities(entity_vectors, c.tau);
  DocumentAssignment assignment = assign_documents(corpus, clusters, entity_vectors);

  std::map<std::string, Vector> doc_vectors;
  for (const Document& d : corpus) doc_vectors[d.id] = emb.embed_sequence(d.tokens());
  std::vector<PseudoDocument> pseudo;
  for (DocCluster& dc : assignment.clusters) {
    compute_importance(dc, doc_vectors);
    pseudo.push_back(build_pseudo_document(dc, corpus));
  }
  Splits splits = split_documents(corpus, c.val_fraction, c.test_fraction);

  const fs::path dir = prepare_dir(c);
  fs::create_directories(dir);

  std::vector<Json> docs;
  for (const Document& d : corpus) docs.push_back(document_record(d));
  r.outputs.push_back(dir / "documents.jsonl");
  write_jsonl(r.outputs.back(), docs);

  std::vector<Json> pseudo_records;
  Json pseudo_report = Json::array();
  for (const PseudoDocument& pd : pseudo) {
    Json rec = document_record(pd.to_document());
    Json prov = Json::array();
    std::vector<std::string> sources;
    for (const PseudoSentence& s : pd.sentences) {
      prov.push_back({s.source_doc_id, s.original_index});
      if (sources.empty() || sources.back() != s.source_doc_id) sources.push_back(s.source_doc_id);
    }
    rec["provenance"] = prov;
    pseudo_records.push_back(rec);
    pseudo_report.push_back({{"id", pd.id()}, {"cluster_id", pd.cluster_id},
                             {"sentences", pd.sentences.size()}, {"source_docs", sources}});
  }
  r.outputs.push_back(dir / "pseudo_documents.jsonl");
  write_jsonl(r.outputs.back(), pseudo_records);

  Json entity_json = Json::array();
  for (const EntityCluster& ec : clusters) {
    entity_json.push_back({{"cluster_id", ec.cluster_id}, {"members", ec.members}});
  }
  Json doc_json = Json::array();
  for (const DocCluster& dc : assignment.clusters) {
    doc_json.push_back({{"cluster_id", dc.cluster_id}, {"doc_ids", dc.doc_ids}, {"importance", dc.importance}});
  }
  Json report = {{"tau", c.tau},
                 {"documents", corpus.size()},
                 {"entities", entity_ids.size()},
                 {"entity_clusters", entity_json},
                 {"doc_clusters", doc_json},
                 {"skipped_documents", assignment.skipped},
                 {"pseudo_documents", pseudo_report}};
  r.outputs.push_back(dir / "clusters.json");
  write_json_file(r.outputs.back(), report);

  r.outputs.push_back(dir / "splits.json");
  write_json_file(r.outputs.back(), Json{{"train", splits.train}, {"val", splits.val}, {"test", splits.test}});

  r.summary = {{"documents", corpus.size()},
               {"entity_clusters", clusters.size()},
               {"pseudo_documents", pseudo.size()},
               {"skipped_documents", assignment.skipped.size()},
               {"train", splits.train.size()},
               {"val", splits.val.size()},
               {"test", splits.test.size()}};
  write_manifest(c, r.command, dir, config_inputs(c, false), r.outputs, r.summary);
  return r;
}

StageResult cmd_retrieve(const RunConfig& c) {
  StageResult r{"retrieve", {}, {}};
  const fs::path dir = retrieve_dir(c);
  fs::create_directories(dir);
  r.outputs.push_back(dir / "guidance.jsonl");
  run_retrieval(c, c.k, r.outputs.back(), r.summary);
  auto inputs = config_inputs(c, true);
  inputs.emplace_back("prepare/documents.jsonl", prepare_dir(c) / "documents.jsonl");
  inputs.emplace_back("prepare/pseudo_documents.jsonl", prepare_dir(c) / "pseudo_documents.jsonl");
  write_manifest(c, r.command, dir, inputs, r.outputs, r.summary);
  return r;
}

StageResult cmd_train(const RunConfig& c) {
  StageResult r{"train", {}, {}};
  const fs::path dir = train_dir(c, c.train.mode);
  fs::create_directories(dir);
  const fs::path guidance = retrieve_dir(c) / "guidance.jsonl";
  fs::remove(dir / "model.ckpt");
  TrainingRun run = run_training(c, c.train, guidance, dir / "model.ckpt", dir / "loss.csv");
  r.outputs = {dir / "model.ckpt", dir / "loss.csv"};
  r.summary = run.summary;
  auto inputs = config_inputs(c, c.train.mode != GuidanceMode::kVanilla);
  inputs.emplace_back("prepare/documents.jsonl", prepare_dir(c) / "documents.jsonl");
  inputs.emplace_back("prepare/splits.json", prepare_dir(c) / "splits.json");
  if (c.train.mode != GuidanceMode::kVanilla) inputs.emplace_back("retrieve/guidance.jsonl", guidance);
  write_manifest(c, r.command, dir, inputs, r.outputs, r.summary);
  return r;
}

StageResult cmd_summarize(const RunConfig& c, bool with_entities) {
  StageResult r{"summarize", {}, {}};
  const fs::path ckpt_path = require_artifact(c, train_dir(c, c.train.mode) / "model.ckpt", "train");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::string label = run_label(ckpt.mode, with_entities);
  const fs::path dir = c.workdir / "summarize" / label;
  fs::create_directories(dir);
  const fs::path guidance = retrieve_dir(c) / "guidance.jsonl";
  auto [test, pseudo] = run_summarize(c, ckpt, with_entities, guidance);
  r.outputs.push_back(dir / "predictions.jsonl");
  write_predictions(r.outputs.back(), test);
  r.outputs.push_back(dir / "pseudo_predictions.jsonl");
  write_predictions(r.outputs.back(), pseudo);
  r.summary = {{"label", label}, {"test_documents", test.size()}, {"pseudo_documents", pseudo.size()}};
  std::vector<std::pair<std::string, fs::path>> inputs{{rel(c, ckpt_path), ckpt_path}};
  if (with_entities && ckpt.mode != GuidanceMode::kVanilla) inputs.emplace_back("retrieve/guidance.jsonl", guidance);
  write_manifest(c, r.command, dir, inputs, r.outputs, r.summary);
  return r;
}

StageResult cmd_evaluate(const RunConfig& c, bool with_entities) {
  StageResult r{"evaluate", {}, {}};
  const GuidanceMode mode = c.train.mode;
  const std::string label = run_label(mode, with_entities);
  const fs::path pred_dir = c.workdir / "summarize" / label;
  const fs::path test_path = require_artifact(c, pred_dir / "predictions.jsonl", "summarize");
  const fs::path pseudo_path = require_artifact(c, pred_dir / "pseudo_predictions.jsonl", "summarize");
  const Gazetteer gaz = Gazetteer::load(c.gazetteer);
  Prepared p = load_prepared(c, gaz);
  const HashEmbedder emb = c.embedder();
  EvalOptions opts{c.ngram};

  std::vector<Prediction> test = read_predictions(test_path);
  MetricReport test_report = evaluate(test, p.documents, gaz, emb, opts);
  MetricReport pseudo_report;
  pseudo_report.n_values = c.ngram;
  if (fs::file_size(pseudo_path) > 0) {
    pseudo_report = evaluate(read_predictions(pseudo_path), p.pseudo, gaz, emb, opts);
  }

  const fs::path dir = c.workdir / "evaluate" / label;
  fs::create_directories(dir);
  r.outputs.push_back(dir / "report.json");
  write_json_file(r.outputs.back(), Json{{"label", label},
                                         {"test", test_report.to_json()},
                                         {"pseudo", pseudo_report.to_json()}});
  r.outputs.push_back(dir / "report.txt");
  write_text_file(r.outputs.back(),
                  format_report_table({{label + " test", &test_report}, {label + " pseudo", &pseudo_report}}));
  r.summary = {{"label", label},
               {"test_documents", test_report.docs.size()},
               {"pseudo_documents", pseudo_report.docs.size()},
               {"entity_source", prf_row(test_report.mean.entity_source)}};
  write_manifest(c, r.command, dir,
                 {{rel(c, test_path), test_path}, {rel(c, pseudo_path), pseudo_path}}, r.outputs, r.summary);
  return r;
}

StageResult cmd_ablate(const RunConfig& c) {
  StageResult r{"ablate", {}, {}};
  const std::vector<int> ks = normalize_k_list(c.k_list);
  const fs::path root = c.workdir / "ablate";
  fs::create_directories(root);
  const Gazetteer gaz = Gazetteer::load(c.gazetteer);
  const HashEmbedder emb = c.embedder();

  std::vector<MetricReport> reports;
  std::vector<std::string> labels;
  Json rows = Json::array();
  std::vector<double> p_src, r_tgt;
  for (int k : ks) {
    const fs::path dir = root / ("k" + std::to_string(k));
    fs::create_directories(dir);
    Json retrieval_summary;
    const fs::path guidance = dir / "guidance.jsonl";
    run_retrieval(c, k, guidance, retrieval_summary);

    TrainConfig tc = c.train;
    tc.mode = GuidanceMode::kEntitiesFacts;
    tc.k = k;
    fs::remove(dir / "model.ckpt");
    TrainingRun run = run_training(c, tc, guidance, dir / "model.ckpt", dir / "loss.csv");
    const Checkpoint ckpt = load_checkpoint(dir / "model.ckpt");
    auto preds = run_summarize(c, ckpt, true, guidance).first;
    write_predictions(dir / "predictions.jsonl", preds);
    Prepared p = load_prepared(c, gaz);
    reports.push_back(evaluate(preds, p.documents, gaz, emb, EvalOptions{c.ngram}));
    write_json_file(dir / "report.json", reports.back().to_json());
    labels.push_back("K=" + std::to_string(k));
    for (const char* name : {"guidance.jsonl", "model.ckpt", "loss.csv", "predictions.jsonl", "report.json"}) {
      r.outputs.push_back(dir / name);
    }

    const DocMetrics& m = reports.back().mean;
    const double rt = m.entity_target ? m.entity_target->recall : 0.0;
    p_src.push_back(m.entity_source.precision);
    r_tgt.push_back(rt);
    rows.push_back({{"k", k},
                    {"precision_source", m.entity_source.precision},
                    {"recall_target", rt},
                    {"best_val_loss", run.summary["best_val_loss"]},
                    {"mean", reports.back().to_json()["mean"]}});
  }

  Json trend = {{"precision_source", trend_direction(p_src)}, {"recall_target", trend_direction(r_tgt)}};
  r.outputs.push_back(root / "ablation.json");
  write_json_file(r.outputs.back(), Json{{"k_list", ks}, {"rows", rows}, {"trend", trend}});

  std::string text = "K      P-src    R-tgt\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    char line[96];
    std::snprintf(line, sizeof(line), "%-4d %8.3f %8.3f\n", ks[i], p_src[i] * 100.0, r_tgt[i] * 100.0);
    text += line;
  }
  text += "trend precision-source: " + trend["precision_source"].get<std::string>() + "\n";
  text += "trend recall-target: " + trend["recall_target"].get<std::string>() + "\n\n";
  std::vector<std::pair<std::string, const MetricReport*>> table;
  for (std::size_t i = 0; i < reports.size(); ++i) table.emplace_back(labels[i], &reports[i]);
  text += format_report_table(table);
  r.outputs.push_back(root / "ablation.txt");
  write_text_file(r.outputs.back(), text);

  r.summary = {{"k_list", ks}, {"trend", trend}};
  auto inputs = config_inputs(c, true);
  inputs.emplace_back("prepare/documents.jsonl", prepare_dir(c) / "documents.jsonl");
  inputs.emplace_back("prepare/splits.json", prepare_dir(c) / "splits.json");
  write_manifest(c, r.command, root, inputs, r.outputs, r.summary);
  return r;
}

}  // namespace factsum

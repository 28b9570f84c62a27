#include "recall/checkpoint.hpp"

#include <fstream>

#include "json.hpp"
#include "recall/errors.hpp"

namespace recall {

using nlohmann::json;

namespace {

constexpr int kVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParserModel& model, const Adam* optimizer) {
  const ParserConfig& c = model.config();
  json j;
  j["format"] = "recall-checkpoint";
  j["version"] = kVersion;
  j["config"] = {{"word_emb_dim", c.word_emb_dim},   {"hidden_dim", c.hidden_dim},
                 {"action_emb_dim", c.action_emb_dim}, {"dar_enabled", c.dar_enabled},
                 {"rng_seed", c.rng_seed},           {"init_range", c.init_range},
                 {"max_decode_steps", c.max_decode_steps}};
  j["vocabulary"] = model.vocabulary().words();
  j["num_actions"] = model.num_actions();
  j["num_tasks"] = model.num_tasks();
  j["tags"] = model.params().tags();
  json tensors = json::object();
  for (const TensorInfo& t : model.params().tensors()) {
    const auto begin = model.params().values().begin() + static_cast<std::ptrdiff_t>(t.offset);
    tensors[t.name] = {{"rows", t.rows},
                       {"cols", t.cols},
                       {"values", std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(t.size()))}};
  }
  j["tensors"] = std::move(tensors);
  if (optimizer) {
    const auto& h = optimizer->hyper();
    j["optimizer"] = {{"lr", h.lr},
                      {"beta1", h.beta1},
                      {"beta2", h.beta2},
                      {"eps", h.eps},
                      {"m", optimizer->first_moment()},
                      {"v", optimizer->second_moment()},
                      {"steps", optimizer->steps()}};
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << j.dump();
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw MalformedRecord(1, e.what());
  }
  try {
    if (j.at("format") != "recall-checkpoint" || j.at("version").get<int>() != kVersion)
      throw MalformedRecord(1, "unsupported checkpoint format");
    const json& jc = j.at("config");
    ParserConfig c;
    c.word_emb_dim = jc.at("word_emb_dim");
    c.hidden_dim = jc.at("hidden_dim");
    c.action_emb_dim = jc.at("action_emb_dim");
    c.dar_enabled = jc.at("dar_enabled");
    c.rng_seed = jc.at("rng_seed");
    c.init_range = jc.at("init_range");
    c.max_decode_steps = jc.at("max_decode_steps");
    Vocabulary vocab;
    for (const auto& w : j.at("vocabulary").get<std::vector<std::string>>()) vocab.add(w);
    Checkpoint cp{ParserModel(c, std::move(vocab), j.at("num_actions").get<std::size_t>(), j.at("num_tasks").get<int>()),
                  std::nullopt};
    ParamStore& ps = cp.model.params();
    ps.set_tags(j.at("tags").get<std::vector<PartitionTag>>());
    const json& jt = j.at("tensors");
    if (jt.size() != ps.tensors().size()) throw MalformedRecord(1, "tensor count mismatch");
    for (const TensorInfo& t : ps.tensors()) {
      const json& e = jt.at(t.name);
      const auto values = e.at("values").get<std::vector<double>>();
      if (e.at("rows").get<int>() != t.rows || e.at("cols").get<int>() != t.cols || values.size() != t.size())
        throw MalformedRecord(1, "tensor shape mismatch for " + t.name);
      std::copy(values.begin(), values.end(), ps.values().begin() + static_cast<std::ptrdiff_t>(t.offset));
    }
    if (j.contains("optimizer")) {
      const json& jo = j.at("optimizer");
      kernels::AdamHyper h{jo.at("lr"), jo.at("beta1"), jo.at("beta2"), jo.at("eps")};
      Adam adam(ps.size(), h);
      adam.restore(jo.at("m").get<std::vector<double>>(), jo.at("v").get<std::vector<double>>(),
                   jo.at("steps").get<std::vector<std::uint32_t>>());
      cp.optimizer = std::move(adam);
    }
    return cp;
  } catch (const json::exception& e) {
    throw MalformedRecord(1, e.what());
  } catch (const std::invalid_argument& e) {
    throw MalformedRecord(1, e.what());
  }
}

}  // namespace recall

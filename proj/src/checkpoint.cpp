#include "fwrl/checkpoint.hpp"

#include <sstream>

namespace fwrl {

namespace {

std::string join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += format_double(v[i]);
    }
    return out;
}

std::vector<double> split(const std::string& s) {
    std::vector<double> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(std::stod(tok));
    return out;
}

}  // namespace

void PolicyCheckpoint::save(const std::filesystem::path& path) const {
    nnet::WeightFile wf;
    wf.header.set("schema", kSchema);
    policy.config().write_keys(wf.header, "model.");
    wf.header.set("env_steps", env_steps);
    wf.header.set("seed", std::to_string(seed));
    wf.header.set("normalizer.count", normalizer.count());
    wf.header.set("normalizer.mean", join(normalizer.means()));
    wf.header.set("normalizer.variance", join(normalizer.variances()));
    for (const auto& e : metadata.entries()) {
        if (!wf.header.has(e.key)) wf.header.set("meta." + e.key, e.value);
    }
    wf.vectors.push_back(policy.net().params());
    wf.save(path);
}

PolicyCheckpoint PolicyCheckpoint::load(const std::filesystem::path& path) {
    const nnet::WeightFile wf = nnet::WeightFile::load(path);
    const auto& h = wf.header;
    h.require_schema(kSchema);
    PolicyCheckpoint ck;
    const nnet::PolicyConfig cfg = nnet::PolicyConfig::from_keyvalue(h, "model.");
    Rng rng(0);
    ck.policy = nnet::Policy(cfg, rng);
    if (wf.vectors.size() != 1 || wf.vectors[0].size() != ck.policy.net().num_params()) {
        throw nnet::FormatError(path.string() + ": parameter count does not match the model layout");
    }
    ck.policy.net().params() = wf.vectors[0];
    ck.env_steps = h.get_int("env_steps", 0);
    ck.seed = std::stoull(h.get_string("seed", "0"));
    try {
        auto mean = split(h.get_string("normalizer.mean"));
        auto var = split(h.get_string("normalizer.variance"));
        if (static_cast<int>(mean.size()) != cfg.channels || var.size() != mean.size()) {
            throw nnet::FormatError(path.string() + ": normalizer size mismatch");
        }
        ck.normalizer = env::Normalizer(cfg.channels);
        ck.normalizer.set_stats(std::move(mean), std::move(var), h.get_double("normalizer.count"));
    } catch (const std::invalid_argument&) {
        throw nnet::FormatError(path.string() + ": bad normalizer statistics");
    }
    ck.normalizer.set_frozen(true);
    for (const auto& e : h.entries()) {
        if (e.key.rfind("meta.", 0) == 0) ck.metadata.set(e.key.substr(5), e.value);
    }
    return ck;
}

}  // namespace fwrl

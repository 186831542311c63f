#include "star/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "star/error.hpp"
#include "star/rng.hpp"

using nlohmann::json;

namespace star {

void Vocab::validate() const {
  if (size < 8) throw ConfigError("vocab size must be >= 8");
  if (bos == eos || bos == pad || eos == pad)
    throw ConfigError("bos/eos/pad must be distinct");
  if (bos < 0 || bos >= size || eos < 0 || eos >= size || pad < 0 ||
      pad >= size)
    throw ConfigError("reserved token ids must be < vocab size");
  if (prompt_len < 1) throw ConfigError("prompt_len must be >= 1");
}

int Vocab::regular_token(int rank) const {
  int seen = 0;
  for (int t = 0; t < size; ++t) {
    if (is_reserved(t)) continue;
    if (seen == rank) return t;
    ++seen;
  }
  throw InputError("regular token rank out of range");
}

Codebook make_codebook(const Vocab& vocab, int feature_dim,
                       std::int64_t seed) {
  vocab.validate();
  if (feature_dim < 4) throw ConfigError("feature_dim must be >= 4");
  Rng rng(static_cast<std::uint64_t>(seed));
  Codebook cb(vocab.size, feature_dim);
  for (int t = 0; t < vocab.size; ++t) {
    for (int f = 0; f < feature_dim; ++f) cb(t, f) = rng.normal();
    double norm = cb.row(t).norm();
    if (norm < 1e-12) norm = 1.0;
    cb.row(t) /= norm;
  }
  return cb;
}

Eigen::MatrixXd channel_transform(const DomainSpec& domain, int feature_dim) {
  Eigen::MatrixXd id = Eigen::MatrixXd::Identity(feature_dim, feature_dim);
  if (domain.channel_seed == 0) return id;
  Rng rng(static_cast<std::uint64_t>(domain.channel_seed));
  Eigen::MatrixXd g(feature_dim, feature_dim);
  for (int i = 0; i < feature_dim; ++i)
    for (int j = 0; j < feature_dim; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // fix signs so Q is a deterministic function of g
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < feature_dim; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  double s = domain.channel_strength;
  return (1.0 - s) * id + s * q;
}

namespace {

// Zipf over regular token ranks: p(r) proportional to (r+1)^-skew.
int sample_zipf_token(const Vocab& vocab, double skew, Rng& rng) {
  int n = vocab.num_regular();
  double total = 0.0;
  for (int r = 0; r < n; ++r) total += std::pow(r + 1.0, -skew);
  double u = rng.uniform() * total;
  double acc = 0.0;
  for (int r = 0; r < n; ++r) {
    acc += std::pow(r + 1.0, -skew);
    if (u < acc) return vocab.regular_token(r);
  }
  return vocab.regular_token(n - 1);
}

}  // namespace

Utterance synth_utterance(const Vocab& vocab, const DomainSpec& domain,
                          const Codebook& codebook, int length,
                          std::int64_t seed, int max_len) {
  if (length < 1) throw InputError("utterance length must be >= 1");
  if (length > max_len)
    throw InputError("utterance length " + std::to_string(length) +
                     " exceeds max_len " + std::to_string(max_len));
  const int feat_dim = static_cast<int>(codebook.cols());
  Rng rng(static_cast<std::uint64_t>(seed));
  std::vector<int> ref(length);
  for (int i = 0; i < length; ++i)
    ref[i] = sample_zipf_token(vocab, domain.token_prior_skew, rng);

  Eigen::MatrixXd channel = channel_transform(domain, feat_dim);
  const int fpt = domain.frames_per_token;
  Eigen::MatrixXd feats(length * fpt, feat_dim);
  for (int i = 0; i < length; ++i) {
    Eigen::RowVectorXd frame = codebook.row(ref[i]) * channel.transpose();
    for (int k = 0; k < fpt; ++k) feats.row(i * fpt + k) = frame;
  }
  if (domain.noise_sigma > 0.0) {
    for (int i = 0; i < feats.rows(); ++i)
      for (int j = 0; j < feats.cols(); ++j)
        feats(i, j) += rng.normal(0.0, domain.noise_sigma);
  }
  Utterance utt;
  utt.id = domain.name + "-" + std::to_string(seed);
  utt.features = std::move(feats);
  utt.reference = std::move(ref);
  utt.domain = domain.name;
  return utt;
}

Corpus synth_corpus(const Vocab& vocab, const DomainSpec& domain,
                    const Codebook& codebook, int count, int min_len,
                    int max_len, std::int64_t seed) {
  if (count < 0) throw InputError("count must be >= 0");
  if (min_len > max_len || min_len < 1)
    throw ConfigError("empty or invalid length range");
  Corpus corpus;
  corpus.vocab = vocab;
  corpus.domain = domain;
  corpus.codebook_seed = 0;  // caller may overwrite for provenance
  Rng rng(static_cast<std::uint64_t>(seed));
  corpus.utterances.reserve(count);
  for (int i = 0; i < count; ++i) {
    int len = min_len + static_cast<int>(rng.uniform_int(
                            static_cast<std::uint64_t>(max_len - min_len + 1)));
    std::int64_t utt_seed =
        static_cast<std::int64_t>(derive_seed(seed, static_cast<std::uint64_t>(i)));
    Utterance u = synth_utterance(vocab, domain, codebook, len, utt_seed,
                                  max_len);
    u.id = domain.name + "-" + std::to_string(i);
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

namespace {

json vocab_to_json(const Vocab& v) {
  return json{{"size", v.size}, {"bos", v.bos},      {"eos", v.eos},
              {"pad", v.pad},   {"prompt_len", v.prompt_len}};
}

Vocab vocab_from_json(const json& j) {
  Vocab v;
  v.size = j.at("size").get<int>();
  v.bos = j.at("bos").get<int>();
  v.eos = j.at("eos").get<int>();
  v.pad = j.at("pad").get<int>();
  v.prompt_len = j.at("prompt_len").get<int>();
  return v;
}

json domain_to_json(const DomainSpec& d) {
  return json{{"name", d.name},
              {"noise_sigma", d.noise_sigma},
              {"channel_seed", d.channel_seed},
              {"channel_strength", d.channel_strength},
              {"token_prior_skew", d.token_prior_skew},
              {"frames_per_token", d.frames_per_token}};
}

DomainSpec domain_from_json(const json& j) {
  DomainSpec d;
  d.name = j.at("name").get<std::string>();
  d.noise_sigma = j.at("noise_sigma").get<double>();
  d.channel_seed = j.at("channel_seed").get<std::int64_t>();
  d.channel_strength = j.at("channel_strength").get<double>();
  d.token_prior_skew = j.at("token_prior_skew").get<double>();
  d.frames_per_token = j.at("frames_per_token").get<int>();
  return d;
}

void check_known_fields(const json& j,
                        std::initializer_list<const char*> allowed,
                        long line) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) known = true;
    if (!known)
      throw ParseError("unknown field '" + it.key() + "' in corpus record",
                       line);
  }
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open corpus file for writing: " + path);
  json header{{"format", "star-corpus"},
              {"version", 1},
              {"vocab", vocab_to_json(corpus.vocab)},
              {"domain", domain_to_json(corpus.domain)},
              {"codebook_seed", corpus.codebook_seed}};
  out << header.dump() << "\n";
  for (const Utterance& u : corpus.utterances) {
    json rec{{"id", u.id}, {"domain", u.domain}};
    if (u.reference) rec["ref"] = *u.reference;
    rec["shape"] = {u.features.rows(), u.features.cols()};
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(u.features.size()));
    for (int i = 0; i < u.features.rows(); ++i)
      for (int j = 0; j < u.features.cols(); ++j) flat.push_back(u.features(i, j));
    rec["feat"] = flat;
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("write failure on corpus file: " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw ParseError("missing header line", 1);
  ++line_no;
  Corpus corpus;
  try {
    json header = json::parse(line);
    check_known_fields(header,
                       {"format", "version", "vocab", "domain", "codebook_seed"},
                       line_no);
    if (header.at("format").get<std::string>() != "star-corpus")
      throw ParseError("not a star-corpus file", line_no);
    if (header.at("version").get<int>() != 1)
      throw ParseError("unsupported corpus format version", line_no);
    corpus.vocab = vocab_from_json(header.at("vocab"));
    corpus.domain = domain_from_json(header.at("domain"));
    corpus.codebook_seed = header.at("codebook_seed").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed header: ") + e.what(), line_no);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      check_known_fields(rec, {"id", "domain", "ref", "shape", "feat"},
                         line_no);
      Utterance u;
      u.id = rec.at("id").get<std::string>();
      u.domain = rec.at("domain").get<std::string>();
      if (rec.contains("ref")) u.reference = rec.at("ref").get<std::vector<int>>();
      auto shape = rec.at("shape").get<std::vector<long>>();
      auto flat = rec.at("feat").get<std::vector<double>>();
      if (shape.size() != 2 ||
          static_cast<long>(flat.size()) != shape[0] * shape[1])
        throw ParseError("feature shape/data mismatch", line_no);
      u.features.resize(shape[0], shape[1]);
      size_t k = 0;
      for (long i = 0; i < shape[0]; ++i)
        for (long j = 0; j < shape[1]; ++j) u.features(i, j) = flat[k++];
      corpus.utterances.push_back(std::move(u));
    } catch (const ParseError&) {
      throw;
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line_no);
    }
  }
  return corpus;
}

bool corpus_equal(const Corpus& a, const Corpus& b) {
  if (!(a.vocab == b.vocab) || !(a.domain == b.domain) ||
      a.codebook_seed != b.codebook_seed ||
      a.utterances.size() != b.utterances.size())
    return false;
  for (size_t i = 0; i < a.utterances.size(); ++i) {
    const Utterance& x = a.utterances[i];
    const Utterance& y = b.utterances[i];
    if (x.id != y.id || x.domain != y.domain || x.reference != y.reference)
      return false;
    if (x.features.rows() != y.features.rows() ||
        x.features.cols() != y.features.cols() || x.features != y.features)
      return false;
  }
  return true;
}

}  // namespace star

#include "mixrag/embedding.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "mixrag/errors.hpp"
#include "mixrag/rng.hpp"

namespace mixrag {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t finalize(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  return x ^ (x >> 33);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string out = "{";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(ids[i]);
  }
  return out + "}";
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

HashEmbedder::HashEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim == 0) throw ParameterError("HashEmbedder: dim must be positive");
}

std::vector<double> HashEmbedder::embed_values(std::string_view text) const {
  if (text.empty()) throw ParameterError("embed_text: empty text");
  std::vector<double> v(dim_, 0.0);
  const std::uint64_t salt = mix_seed(seed_, "hash-embedder");
  auto add = [&](std::string_view feature) {
    const std::uint64_t h = finalize(fnv1a(feature) ^ salt);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[(h & 0x7fffffffffffffffULL) % dim_] += sign;
  };

  auto tokens = tokenize(text);
  if (tokens.empty()) tokens.emplace_back(text);
  for (std::size_t n = 1; n <= 3; ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string gram = tokens[i];
      for (std::size_t j = 1; j < n; ++j) gram += ' ' + tokens[i + j];
      add(gram);
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    // Every feature cancelled out; fall back to the raw text as one feature.
    const std::uint64_t h = finalize(fnv1a(text) ^ salt);
    v[h % dim_] = 1.0;
    norm = 1.0;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

Tensor HashEmbedder::embed(std::string_view text) const { return Tensor::vector(embed_values(text)); }

std::string_view kind_name(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::node:
      return "node";
    case EmbeddingKind::relation:
      return "relation";
    case EmbeddingKind::triple:
      return "triple";
  }
  return "?";
}

EmbeddingTable::EmbeddingTable(std::size_t dim, Tensor nodes, Tensor relations, Tensor triples)
    : dim_(dim), nodes_(std::move(nodes)), relations_(std::move(relations)), triples_(std::move(triples)) {
  for (const Tensor* m : {&nodes_, &relations_, &triples_}) {
    if (m->ndim() != 2 || m->cols() != dim_) {
      throw DimensionError("EmbeddingTable: expected [n x " + std::to_string(dim_) + "], got " +
                           shape_string(m->shape()));
    }
    if (!m->all_finite()) throw FormatError("EmbeddingTable: non-finite embedding value");
  }
}

const Tensor& EmbeddingTable::matrix(EmbeddingKind kind) const {
  switch (kind) {
    case EmbeddingKind::node:
      return nodes_;
    case EmbeddingKind::relation:
      return relations_;
    case EmbeddingKind::triple:
      break;
  }
  return triples_;
}

Tensor EmbeddingTable::node(EntityId id) const {
  if (id >= nodes_.rows()) throw RangeError("node embedding " + std::to_string(id) + " out of range");
  auto d = nodes_.data().subspan(id * dim_, dim_);
  return Tensor::vector({d.begin(), d.end()});
}

Tensor EmbeddingTable::relation(RelationId id) const {
  if (id >= relations_.rows()) throw RangeError("relation embedding " + std::to_string(id) + " out of range");
  auto d = relations_.data().subspan(id * dim_, dim_);
  return Tensor::vector({d.begin(), d.end()});
}

Tensor EmbeddingTable::triple(TripleId id) const {
  if (id >= triples_.rows()) throw RangeError("triple embedding " + std::to_string(id) + " out of range");
  auto d = triples_.data().subspan(id * dim_, dim_);
  return Tensor::vector({d.begin(), d.end()});
}

EmbeddingTable embed_graph(const HashEmbedder& embedder, const TextualGraph& graph) {
  const std::size_t d = embedder.dim();
  auto build = [&](std::size_t n, auto&& text_of) {
    std::vector<double> values;
    values.reserve(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      auto v = embedder.embed_values(text_of(i));
      values.insert(values.end(), v.begin(), v.end());
    }
    return Tensor({n, d}, std::move(values));
  };
  return EmbeddingTable(d, build(graph.num_entities(), [&](std::size_t i) { return graph.entity(i).text; }),
                        build(graph.num_relations(), [&](std::size_t i) { return graph.relation(i).text; }),
                        build(graph.num_triples(), [&](std::size_t i) { return graph.triple_text(i); }));
}

namespace {

void write_section(std::ostream& out, const Tensor& m, std::size_t dim, EmbeddingKind kind) {
  out << "dim=" << dim << " kind=" << kind_name(kind) << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << r;
    for (std::size_t c = 0; c < dim; ++c) out << ' ' << format_double(m.at(r, c));
    out << '\n';
  }
}

}  // namespace

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (auto kind : {EmbeddingKind::node, EmbeddingKind::relation, EmbeddingKind::triple}) {
    write_section(out, table.matrix(kind), table.dim(), kind);
  }
}

void save_embeddings(const EmbeddingTable& table, EmbeddingKind kind, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_section(out, table.matrix(kind), table.dim(), kind);
}

EmbeddingTable load_embeddings(std::span<const std::filesystem::path> paths, const TextualGraph& graph) {
  std::optional<std::size_t> dim;
  std::map<EmbeddingKind, std::map<std::size_t, std::vector<double>>> rows;

  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::optional<EmbeddingKind> kind;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line.rfind("dim=", 0) == 0) {
        std::istringstream header(line);
        std::string dim_part, kind_part;
        header >> dim_part >> kind_part;
        std::size_t d = 0;
        auto [p, ec] = std::from_chars(dim_part.data() + 4, dim_part.data() + dim_part.size(), d);
        if (ec != std::errc() || d == 0) fail("bad dim in header");
        if (dim && *dim != d) fail("dim " + std::to_string(d) + " differs from earlier dim " + std::to_string(*dim));
        dim = d;
        if (kind_part == "kind=node") kind = EmbeddingKind::node;
        else if (kind_part == "kind=relation") kind = EmbeddingKind::relation;
        else if (kind_part == "kind=triple") kind = EmbeddingKind::triple;
        else fail("unknown kind '" + kind_part + "'");
        continue;
      }
      if (!kind) fail("row before any header");
      const char* cur = line.data();
      const char* end = line.data() + line.size();
      std::size_t id = 0;
      auto [p, ec] = std::from_chars(cur, end, id);
      if (ec != std::errc()) fail("bad row id");
      cur = p;
      std::vector<double> values;
      while (cur < end) {
        while (cur < end && *cur == ' ') ++cur;
        if (cur == end) break;
        double v = 0.0;
        auto [q, ec2] = std::from_chars(cur, end, v);
        if (ec2 != std::errc()) fail("bad float");
        values.push_back(v);
        cur = q;
      }
      if (values.size() != *dim) {
        fail("row has " + std::to_string(values.size()) + " values, expected dim " + std::to_string(*dim));
      }
      rows[*kind][id] = std::move(values);
    }
  }
  if (!dim) throw FormatError("no embedding sections found");

  auto assemble = [&](EmbeddingKind kind, std::size_t count) {
    std::vector<std::size_t> missing;
    std::vector<double> values;
    values.reserve(count * *dim);
    auto& table = rows[kind];
    for (std::size_t id = 0; id < count; ++id) {
      auto it = table.find(id);
      if (it == table.end()) {
        missing.push_back(id);
        continue;
      }
      values.insert(values.end(), it->second.begin(), it->second.end());
    }
    if (!missing.empty()) {
      throw CoverageError("missing " + std::string(kind_name(kind)) + " ids " + join_ids(missing));
    }
    return Tensor({count, *dim}, std::move(values));
  };
  auto nodes = assemble(EmbeddingKind::node, graph.num_entities());
  auto relations = assemble(EmbeddingKind::relation, graph.num_relations());
  auto triples = assemble(EmbeddingKind::triple, graph.num_triples());
  return EmbeddingTable(*dim, std::move(nodes), std::move(relations), std::move(triples));
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const TextualGraph& graph) {
  return load_embeddings(std::span<const std::filesystem::path>(&path, 1), graph);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace mixrag

#include "auxlm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "auxlm/errors.hpp"

namespace auxlm {

using nlohmann::json;

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

double perplexity(const Transformer<float>& model, const std::vector<EncodedExample>& examples) {
    Workspace<float> ws;
    CeSum total;
    for (const auto& ex : examples) {
        model.forward(ex.input_ids, ws);
        CeSum c = cross_entropy_sum(ws.lm_logits, ex.lm_labels);
        total.sum += c.sum;
        total.count += c.count;
    }
    if (total.count == 0) throw Error("perplexity: no labeled positions");
    return std::exp(total.sum / static_cast<double>(total.count));
}

namespace {

// n-gram -> count; n-grams encoded as joined tokens with a separator that
// whitespace tokenization cannot produce.
using NgramCounts = std::map<std::string, int64_t>;

NgramCounts count_ngrams(const std::vector<std::string>& toks, int n) {
    NgramCounts counts;
    if (static_cast<int>(toks.size()) < n) return counts;
    for (size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += toks[i + j];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace

BleuResult bleu_corpus(const std::vector<std::vector<std::string>>& hyps,
                       const std::vector<std::vector<std::vector<std::string>>>& refs,
                       int max_n) {
    if (hyps.empty()) throw Error("bleu: empty hypothesis set");
    if (hyps.size() != refs.size()) throw Error("bleu: hypothesis/reference count mismatch");
    if (max_n < 1) throw Error("bleu: max_n must be at least 1");

    std::vector<int64_t> matches(max_n, 0), totals(max_n, 0);
    int64_t hyp_len = 0, ref_len = 0;
    for (size_t i = 0; i < hyps.size(); ++i) {
        const auto& hyp = hyps[i];
        const auto& ref_list = refs[i];
        if (ref_list.empty()) throw Error("bleu: hypothesis without references");
        hyp_len += static_cast<int64_t>(hyp.size());

        // closest reference length; ties to the shorter
        int64_t best = static_cast<int64_t>(ref_list[0].size());
        for (const auto& r : ref_list) {
            int64_t len = static_cast<int64_t>(r.size());
            int64_t c = static_cast<int64_t>(hyp.size());
            if (std::llabs(len - c) < std::llabs(best - c) ||
                (std::llabs(len - c) == std::llabs(best - c) && len < best)) {
                best = len;
            }
        }
        ref_len += best;

        for (int n = 1; n <= max_n; ++n) {
            NgramCounts hc = count_ngrams(hyp, n);
            NgramCounts clip;
            for (const auto& r : ref_list) {
                for (const auto& [g, c] : count_ngrams(r, n)) {
                    auto it = clip.find(g);
                    if (it == clip.end()) {
                        clip[g] = c;
                    } else {
                        it->second = std::max(it->second, c);
                    }
                }
            }
            for (const auto& [g, c] : hc) {
                totals[n - 1] += c;
                auto it = clip.find(g);
                if (it != clip.end()) matches[n - 1] += std::min(c, it->second);
            }
        }
    }

    BleuResult out;
    constexpr double kEps = 1e-9;
    double log_sum = 0.0;
    int used = 0;
    for (int n = 0; n < max_n; ++n) {
        if (totals[n] == 0) continue;  // order absent from the corpus entirely
        ++used;
        double num = static_cast<double>(matches[n]);
        if (matches[n] == 0) {
            num = kEps;
            out.smoothed = true;
        }
        log_sum += std::log(num / static_cast<double>(totals[n]));
    }
    out.effective_max_n = used;
    if (used == 0 || hyp_len == 0) {
        out.score = 0.0;
        return out;
    }
    double bp = 1.0;
    if (hyp_len < ref_len) {
        bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    }
    out.score = 100.0 * bp * std::exp(log_sum / used);
    return out;
}

double rouge_l_pair(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    if (hyp.empty() || ref.empty()) throw Error("rouge_l: empty token list");
    size_t n = hyp.size(), m = ref.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            cur[j] = hyp[i - 1] == ref[j - 1] ? prev[j - 1] + 1
                                              : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    int lcs = prev[m];
    if (lcs == 0) return 0.0;
    double p = static_cast<double>(lcs) / static_cast<double>(n);
    double r = static_cast<double>(lcs) / static_cast<double>(m);
    return 2.0 * p * r / (p + r);
}

RougeResult rouge_l_corpus(const std::vector<std::vector<std::string>>& hyps,
                           const std::vector<std::vector<std::string>>& refs) {
    if (hyps.size() != refs.size()) throw Error("rouge_l: hypothesis/reference count mismatch");
    RougeResult out;
    double sum = 0.0;
    for (size_t i = 0; i < hyps.size(); ++i) {
        if (hyps[i].empty() || refs[i].empty()) {
            ++out.skipped;
            continue;
        }
        sum += rouge_l_pair(hyps[i], refs[i]);
        ++out.pairs;
    }
    out.mean_f1 = out.pairs > 0 ? sum / static_cast<double>(out.pairs) : 0.0;
    return out;
}

EmbeddingProvider EmbeddingProvider::from_model(const Transformer<float>& model,
                                                const Vocab& vocab) {
    EmbeddingProvider p;
    p.source = Source::ModelEmbeddings;
    p.dim = model.cfg.d_model;
    for (size_t w = 0; w < vocab.word_count(); ++w) {
        TokenId id = static_cast<TokenId>(kFirstWordId + w);
        const float* row = model.params.tok_emb.row(id);
        p.table[vocab.word_at(w)] = std::vector<float>(row, row + p.dim);
    }
    return p;
}

EmbeddingProvider EmbeddingProvider::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    EmbeddingProvider p;
    p.source = Source::VectorFile;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        std::vector<float> vec;
        double v;
        while (ls >> v) vec.push_back(static_cast<float>(v));
        if (vec.empty()) {
            throw SchemaError("'" + path + "' line " + std::to_string(lineno) +
                              ": no vector values");
        }
        if (p.dim == 0) p.dim = static_cast<int>(vec.size());
        if (static_cast<int>(vec.size()) != p.dim) {
            throw SchemaError("'" + path + "' line " + std::to_string(lineno) + ": expected " +
                              std::to_string(p.dim) + " values, got " +
                              std::to_string(vec.size()));
        }
        p.table[word] = std::move(vec);
    }
    if (p.table.empty()) throw SchemaError("'" + path + "': no vectors");
    return p;
}

const std::vector<float>* EmbeddingProvider::find(const std::string& word) const {
    auto it = table.find(word);
    return it == table.end() ? nullptr : &it->second;
}

namespace {

std::vector<const std::vector<float>*> known_vectors(const std::vector<std::string>& words,
                                                     const EmbeddingProvider& p) {
    std::vector<const std::vector<float>*> out;
    for (const auto& w : words) {
        if (const auto* v = p.find(w)) out.push_back(v);
    }
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double cosine_f(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

bool is_zero(const std::vector<double>& v) {
    for (double x : v) {
        if (x != 0.0) return false;
    }
    return true;
}

std::vector<double> mean_pool(const std::vector<const std::vector<float>*>& vs, int dim) {
    std::vector<double> out(dim, 0.0);
    for (const auto* v : vs) {
        for (int i = 0; i < dim; ++i) out[i] += (*v)[i];
    }
    for (auto& x : out) x /= static_cast<double>(vs.size());
    return out;
}

// Per dimension, the value of maximum absolute magnitude; ties prefer the
// positive value.
std::vector<double> extrema_pool(const std::vector<const std::vector<float>*>& vs, int dim) {
    std::vector<double> out(dim, 0.0);
    for (int i = 0; i < dim; ++i) {
        double best = 0.0;
        for (const auto* v : vs) {
            double x = static_cast<double>((*v)[i]);
            if (std::abs(x) > std::abs(best) || (std::abs(x) == std::abs(best) && x > best)) {
                best = x;
            }
        }
        out[i] = best;
    }
    return out;
}

}  // namespace

std::optional<double> emb_average(const std::vector<std::string>& hyp,
                                  const std::vector<std::string>& ref,
                                  const EmbeddingProvider& p, int64_t* zero_norm) {
    auto hv = known_vectors(hyp, p);
    auto rv = known_vectors(ref, p);
    if (hv.empty() || rv.empty()) return std::nullopt;
    auto hm = mean_pool(hv, p.dim);
    auto rm = mean_pool(rv, p.dim);
    if (is_zero(hm) || is_zero(rm)) {
        if (zero_norm) ++*zero_norm;
        return 0.0;
    }
    return cosine(hm, rm);
}

std::optional<double> emb_greedy(const std::vector<std::string>& hyp,
                                 const std::vector<std::string>& ref,
                                 const EmbeddingProvider& p, int64_t* zero_norm) {
    (void)zero_norm;  // no pooled vector in the greedy formula
    auto hv = known_vectors(hyp, p);
    auto rv = known_vectors(ref, p);
    if (hv.empty() || rv.empty()) return std::nullopt;
    auto directional = [](const std::vector<const std::vector<float>*>& from,
                          const std::vector<const std::vector<float>*>& to) {
        double sum = 0.0;
        for (const auto* f : from) {
            double best = -1.0;
            for (const auto* t : to) best = std::max(best, cosine_f(*f, *t));
            sum += best;
        }
        return sum / static_cast<double>(from.size());
    };
    return 0.5 * (directional(hv, rv) + directional(rv, hv));
}

std::optional<double> emb_extrema(const std::vector<std::string>& hyp,
                                  const std::vector<std::string>& ref,
                                  const EmbeddingProvider& p, int64_t* zero_norm) {
    auto hv = known_vectors(hyp, p);
    auto rv = known_vectors(ref, p);
    if (hv.empty() || rv.empty()) return std::nullopt;
    auto he = extrema_pool(hv, p.dim);
    auto re = extrema_pool(rv, p.dim);
    if (is_zero(he) || is_zero(re)) {
        if (zero_norm) ++*zero_norm;
        return 0.0;
    }
    return cosine(he, re);
}

EmbCorpus embedding_metrics_corpus(const std::vector<std::vector<std::string>>& hyps,
                                   const std::vector<std::vector<std::string>>& refs,
                                   const EmbeddingProvider& p) {
    if (hyps.size() != refs.size()) throw Error("embedding metrics: pair count mismatch");
    EmbCorpus out;
    double sa = 0.0, sg = 0.0, se = 0.0;
    for (size_t i = 0; i < hyps.size(); ++i) {
        auto a = emb_average(hyps[i], refs[i], p, &out.zero_norm);
        if (!a) {
            ++out.skipped;
            continue;
        }
        auto g = emb_greedy(hyps[i], refs[i], p);
        auto e = emb_extrema(hyps[i], refs[i], p, &out.zero_norm);
        sa += *a;
        sg += *g;
        se += *e;
        ++out.pairs;
    }
    if (out.pairs > 0) {
        out.average = sa / static_cast<double>(out.pairs);
        out.greedy = sg / static_cast<double>(out.pairs);
        out.extrema = se / static_cast<double>(out.pairs);
    }
    return out;
}

const char* MetricsReport::csv_header() {
    return "ppl,bleu,rouge_l,average,greedy,extrema";
}

namespace {

std::string cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

}  // namespace

std::string MetricsReport::csv_row() const {
    return cell(ppl) + "," + cell(bleu) + "," + cell(rouge_l) + "," + cell(emb_average) + "," +
           cell(emb_greedy) + "," + cell(emb_extrema);
}

std::string MetricsReport::to_json_string() const {
    json j;
    auto put = [&](const char* k, const std::optional<double>& v) {
        if (v) j[k] = *v;
    };
    put("ppl", ppl);
    put("bleu", bleu);
    put("rouge_l", rouge_l);
    put("average", emb_average);
    put("greedy", emb_greedy);
    put("extrema", emb_extrema);
    j["examples"] = examples;
    j["rouge_skipped"] = rouge_skipped;
    j["emb_skipped"] = emb_skipped;
    j["emb_zero_norm"] = emb_zero_norm;
    j["bleu_method"] = "corpus, clipped n-grams, add-epsilon 1e-9 on zero matches";
    j["bleu_smoothed"] = bleu_smoothed;
    j["bleu_effective_max_n"] = bleu_effective_max_n;
    j["rouge_variant"] = "F1 (beta=1)";
    return j.dump(2);
}

}  // namespace auxlm

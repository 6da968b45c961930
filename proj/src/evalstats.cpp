#include "initfeat/evalstats.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>

namespace initfeat {

namespace fs = std::filesystem;

double Rate::percent() const {
    if (denominator == 0) return 0.0;
    return 100.0 * static_cast<double>(numerator) / static_cast<double>(denominator);
}

ojson to_json(const Rate& r) {
    ojson j;
    j["numerator"] = r.numerator;
    j["denominator"] = r.denominator;
    j["percent"] = sig9(r.percent());
    return j;
}

// ---------------------------------------------------------------------------
// Framing tokens

namespace {

std::u32string decode_utf8(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        int len = 0;
        char32_t cp = 0;
        if (b0 < 0x80) {
            cp = b0;
            len = 1;
        } else if ((b0 & 0xE0) == 0xC0) {
            cp = b0 & 0x1F;
            len = 2;
        } else if ((b0 & 0xF0) == 0xE0) {
            cp = b0 & 0x0F;
            len = 3;
        } else if ((b0 & 0xF8) == 0xF0) {
            cp = b0 & 0x07;
            len = 4;
        }
        bool ok = len > 0 && i + static_cast<std::size_t>(len) <= s.size();
        for (int k = 1; ok && k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
            if ((b & 0xC0) != 0x80) ok = false;
            cp = (cp << 6) | (b & 0x3F);
        }
        if (!ok) {
            out.push_back(U'�');
            ++i;
            continue;
        }
        out.push_back(cp);
        i += static_cast<std::size_t>(len);
    }
    return out;
}

char32_t fold(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 0x20;
    if (c >= 0x0410 && c <= 0x042F) return c + 0x20;  // А..Я
    if (c >= 0x0400 && c <= 0x040F) return c + 0x50;  // Ѐ..Џ
    return c;
}

bool is_space(char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\v' || c == U'\f' ||
           c == 0x00A0 || c == 0x3000;
}

}  // namespace

std::u32string normalize_text(std::string_view utf8) {
    std::u32string out;
    bool pending_space = false;
    for (char32_t c : decode_utf8(utf8)) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(U' ');
        pending_space = false;
        out.push_back(fold(c));
    }
    return out;
}

FramingTokenList load_framing_tokens(const fs::path& path) {
    const ojson j = read_json_file(path);
    FramingTokenList l;
    try {
        l.language = j.at("language").get<std::string>();
        l.tokens = j.at("tokens").get<std::vector<std::string>>();
    } catch (const std::exception& e) {
        throw DataError(fmt::format("{}: {}", path.string(), e.what()));
    }
    if (l.tokens.empty()) throw DataError(fmt::format("{}: empty token list", path.string()));
    return l;
}

Rate framing_rate(const std::vector<std::string>& outputs, const FramingTokenList& list,
                  const FramingOptions& opts) {
    if (opts.window == 0) throw UsageError("framing window must be >= 1");
    std::set<std::u32string> tokens;
    for (const auto& t : list.tokens) {
        std::u32string n = normalize_text(t);
        while (!n.empty() && n.back() == U' ') n.pop_back();
        if (!n.empty()) tokens.insert(std::move(n));
    }
    if (tokens.empty()) throw DataError(fmt::format("framing token list '{}' is empty", list.language));
    if (outputs.empty()) throw DataError("framing rate: no outputs");

    Rate r;
    r.denominator = outputs.size();
    for (const auto& o : outputs) {
        std::u32string text = normalize_text(o);
        if (!opts.full_text && text.size() > opts.window) text.resize(opts.window);
        for (const auto& t : tokens) {
            if (text.find(t) != std::u32string::npos) {
                ++r.numerator;
                break;
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Judge prompts

std::string_view to_string(Detector d) {
    switch (d) {
        case Detector::irrelevant: return "irrelevant";
        case Detector::untranslated: return "untranslated";
        case Detector::repetition: return "repetition";
        case Detector::language: return "language";
    }
    return "?";
}

std::string_view judge_template(Detector d) {
    switch (d) {
        case Detector::irrelevant:
            return "Your task is to assess the semantic relevance between the source text and its translation.\n"
                   "Source (${source_lang}): ${source_text}\n"
                   "Target (${target_lang}): ${target_text}\n"
                   "Determine if the target text is semantically unrelated to the source text. If the core "
                   "meaning of the translation completely deviates from the source (i.e., it constitutes a "
                   "'hallucination' or is entirely off-topic), return '1'. If the translation maintains "
                   "semantic correspondence with the source, even if imperfect, return '0'.";
        case Detector::untranslated:
            return "Your task is to detect untranslated content in the target text.\n"
                   "Source (${source_lang}): ${source_text}\n"
                   "Target (${target_lang}): ${target_text}\n"
                   "Identify if any segment of the source text that requires translation has been left "
                   "untranslated in the target text. Note that proper nouns, brand names, or specific "
                   "terminologies might be intentionally retained, which should not be considered an error. "
                   "An error occurs only when translatable content is incorrectly left in the source "
                   "language.\n"
                   "If an untranslated error is detected, return '1'. Otherwise, return '0'.";
        case Detector::repetition:
            return "Act as a language quality evaluator. Your task is to analyze the provided translation for "
                   "redundancy issues.\n"
                   "Source (${source_lang}): ${source_text}\n"
                   "Target (${target_lang}): ${target_text}\n"
                   "Evaluate whether the target text contains unnecessary repetition of words or phrases that "
                   "is not justified by the source text. If such erroneous repetition is present, return '1'. "
                   "Otherwise, return '0'.";
        case Detector::language:
            return "Your task is to perform language identification on the provided text.\n"
                   "Input Text: ${target_text}\n"
                   "Identify the language of this text and return its ISO 639-1 code (e.g., 'en' for English, "
                   "'pl' for Polish). If the language cannot be reliably determined, output 'unknown'.";
    }
    return {};
}

std::string render_judge_prompt(Detector d, const SampleMeta& s) {
    const std::string_view tpl = judge_template(d);
    const std::string target = s.output_text.value_or("");
    const std::pair<std::string_view, const std::string*> subs[] = {
        {"${source_lang}", &s.source_lang},
        {"${source_text}", &s.source_text},
        {"${target_lang}", &s.target_lang},
        {"${target_text}", &target},
    };
    std::string out;
    std::size_t i = 0;
    while (i < tpl.size()) {
        bool matched = false;
        if (tpl[i] == '$') {
            for (const auto& [key, value] : subs) {
                if (tpl.substr(i, key.size()) == key) {
                    out += *value;
                    i += key.size();
                    matched = true;
                    break;
                }
            }
        }
        if (!matched) out += tpl[i++];
    }
    return out;
}

std::string JudgeRequest::body() const {
    ojson j;
    j["model"] = model;
    j["temperature"] = 0;
    j["messages"] = ojson::array({ojson{{"role", "user"}, {"content", prompt}}});
    return j.dump();
}

std::string JudgeRequest::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : body()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

// ---------------------------------------------------------------------------
// Transports

HttpTransport::HttpTransport(std::string url, std::string api_key_env, std::chrono::seconds timeout)
    : timeout_(timeout) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw UsageError(fmt::format("judge url '{}' has no scheme", url));
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https")
        throw UsageError(fmt::format("judge url '{}': unsupported scheme", url));
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (scheme == "https") throw UsageError("this build has no TLS support; use an http:// judge url");
#endif
    const auto path_start = url.find('/', scheme_end + 3);
    origin_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
    if (!api_key_env.empty())
        if (const char* key = std::getenv(api_key_env.c_str())) api_key_ = key;
}

std::string HttpTransport::complete(const JudgeRequest& req) {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(path_, headers, req.body(), "application/json");
    if (!res) throw TransportError(fmt::format("judge request to {}{} failed: {}", origin_, path_,
                                               httplib::to_string(res.error())));
    if (res->status >= 500 || res->status == 429)
        throw TransportError(fmt::format("judge returned HTTP {}", res->status));
    if (res->status != 200)
        throw DataError(fmt::format("judge returned HTTP {}: {}", res->status, res->body.substr(0, 200)));
    try {
        const auto j = ojson::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
        throw DataError(fmt::format("unexpected judge response: {}", e.what()));
    }
}

ReplayTransport::ReplayTransport(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open replay file '{}'", path.string()));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = ojson::parse(line);
            replies_[j.at("hash").get<std::string>()] = j.at("reply").get<std::string>();
        } catch (const std::exception& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
}

std::string ReplayTransport::complete(const JudgeRequest& req) {
    const std::string h = req.hash();
    auto it = replies_.find(h);
    if (it == replies_.end()) throw DataError(fmt::format("replay file has no reply for request {}", h));
    return it->second;
}

RecordingTransport::RecordingTransport(JudgeTransport& inner, const fs::path& path)
    : inner_(inner), path_(path) {}

std::string RecordingTransport::complete(const JudgeRequest& req) {
    std::string reply = inner_.complete(req);
    ojson j;
    j["hash"] = req.hash();
    j["reply"] = reply;
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot append to replay file '{}'", path_.string()));
    out << j.dump() << '\n';
    return reply;
}

// ---------------------------------------------------------------------------
// Reply parsing

namespace {

bool is_alnum(char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

std::string_view strip_lead(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r' || s[i] == '\'' ||
                            s[i] == '"' || s[i] == '`'))
        ++i;
    return s.substr(i);
}

}  // namespace

std::optional<bool> parse_flag_reply(std::string_view reply) {
    const std::string_view s = strip_lead(reply);
    if (s.empty() || (s[0] != '0' && s[0] != '1')) return std::nullopt;
    if (s.size() > 1 && (is_alnum(s[1]) || (s[1] == '.' && s.size() > 2 && s[2] >= '0' && s[2] <= '9'))) return std::nullopt;
    return s[0] == '1';
}

std::optional<std::string> parse_language_reply(std::string_view reply) {
    const std::string_view s = strip_lead(reply);
    std::size_t n = 0;
    while (n < s.size() && ((s[n] >= 'a' && s[n] <= 'z') || (s[n] >= 'A' && s[n] <= 'Z'))) ++n;
    if (n < s.size() && is_alnum(s[n])) return std::nullopt;
    std::string code(s.substr(0, n));
    std::transform(code.begin(), code.end(), code.begin(), [](char c) {
        return static_cast<char>(c >= 'A' && c <= 'Z' ? c + 32 : c);
    });
    if (code == "unknown") return code;
    if (code.size() == 2 || code.size() == 3) return code;
    return std::nullopt;
}

std::string primary_language(std::string_view tag) {
    std::string out(tag.substr(0, tag.find_first_of("-_")));
    std::transform(out.begin(), out.end(), out.begin(), [](char c) {
        return static_cast<char>(c >= 'A' && c <= 'Z' ? c + 32 : c);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Verdicts

namespace {

std::string ask(JudgeTransport& t, const JudgeRequest& req, const JudgeOptions& opts) {
    auto delay = opts.backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            return t.complete(req);
        } catch (const TransportError& e) {
            if (attempt >= opts.attempts) throw;
            spdlog::warn("judge attempt {}/{} failed: {}; retrying in {} ms", attempt, opts.attempts, e.what(),
                         delay.count());
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }
}

bool blank(std::string_view s) {
    return normalize_text(s).empty();
}

}  // namespace

HallucinationVerdict judge_sample(JudgeTransport& t, const SampleMeta& s, const JudgeOptions& opts) {
    if (!s.output_text) throw DataError(fmt::format("sample '{}' has no output_text to judge", s.id));
    HallucinationVerdict v;
    v.id = s.id;
    if (blank(*s.output_text)) {
        v.empty_output = true;
        v.is_hallucination = true;
        return v;
    }
    std::vector<std::string> problems;
    for (Detector d : kAllDetectors) {
        const JudgeRequest req{opts.model, render_judge_prompt(d, s)};
        const std::string reply = ask(t, req, opts);
        if (d == Detector::language) {
            const auto code = parse_language_reply(reply);
            if (!code) {
                problems.push_back(fmt::format("language: unparseable reply '{}'", reply.substr(0, 40)));
                continue;
            }
            v.judged_lang = *code;
            v.flags.wrong_language = *code != primary_language(s.target_lang);
            continue;
        }
        const auto flag = parse_flag_reply(reply);
        if (!flag) {
            problems.push_back(fmt::format("{}: unparseable reply '{}'", to_string(d), reply.substr(0, 40)));
            continue;
        }
        if (d == Detector::irrelevant) v.flags.irrelevant = *flag;
        if (d == Detector::untranslated) v.flags.untranslated = *flag;
        if (d == Detector::repetition) v.flags.repetition = *flag;
    }
    if (!problems.empty()) {
        v.judge_error = true;
        v.error_detail = fmt::format("{}", fmt::join(problems, "; "));
    }
    v.is_hallucination = v.flags.any();
    return v;
}

std::vector<HallucinationVerdict> judge_samples(JudgeTransport& t, const std::vector<SampleMeta>& samples,
                                                const JudgeOptions& opts) {
    std::vector<HallucinationVerdict> out(samples.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(opts.in_flight, samples.size()));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= samples.size()) return;
            try {
                out[i] = judge_sample(t, samples[i], opts);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = samples.size();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
    return out;
}

HallucinationSummary hallucination_rate(const std::vector<HallucinationVerdict>& verdicts) {
    HallucinationSummary s;
    s.total = verdicts.size();
    for (const auto& v : verdicts) {
        if (v.judge_error) {
            ++s.judge_errors;
            continue;
        }
        ++s.rate.denominator;
        if (v.is_hallucination) ++s.rate.numerator;
        if (v.empty_output) ++s.empty_outputs;
        s.irrelevant += v.flags.irrelevant;
        s.untranslated += v.flags.untranslated;
        s.repetition += v.flags.repetition;
        s.wrong_language += v.flags.wrong_language;
    }
    if (s.rate.denominator == 0)
        throw DataError(fmt::format("hallucination rate: all {} verdicts have judge errors", s.total));
    return s;
}

ojson to_json(const HallucinationVerdict& v) {
    ojson j;
    j["id"] = v.id;
    j["flags"] = {{"irrelevant", v.flags.irrelevant},
                  {"untranslated", v.flags.untranslated},
                  {"repetition", v.flags.repetition},
                  {"wrong_language", v.flags.wrong_language}};
    j["judged_lang"] = v.judged_lang;
    j["is_hallucination"] = v.is_hallucination;
    j["empty_output"] = v.empty_output;
    j["judge_error"] = v.judge_error;
    if (!v.error_detail.empty()) j["error_detail"] = v.error_detail;
    return j;
}

HallucinationVerdict verdict_from_json(const ojson& j) {
    HallucinationVerdict v;
    v.id = j.at("id").get<std::string>();
    const auto& f = j.at("flags");
    v.flags.irrelevant = f.at("irrelevant").get<bool>();
    v.flags.untranslated = f.at("untranslated").get<bool>();
    v.flags.repetition = f.at("repetition").get<bool>();
    v.flags.wrong_language = f.at("wrong_language").get<bool>();
    v.judged_lang = j.at("judged_lang").get<std::string>();
    v.is_hallucination = j.at("is_hallucination").get<bool>();
    v.empty_output = j.value("empty_output", false);
    v.judge_error = j.value("judge_error", false);
    v.error_detail = j.value("error_detail", std::string());
    return v;
}

ojson to_json(const HallucinationSummary& s) {
    ojson j;
    j["aggregation"] = "any_flag";
    j["rate"] = to_json(s.rate);
    j["total"] = s.total;
    j["judge_errors"] = s.judge_errors;
    j["empty_outputs"] = s.empty_outputs;
    j["flag_counts"] = {{"irrelevant", s.irrelevant},
                        {"untranslated", s.untranslated},
                        {"repetition", s.repetition},
                        {"wrong_language", s.wrong_language}};
    return j;
}

}  // namespace initfeat

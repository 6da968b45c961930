#pragma once

// Output-side statistics: framing-token emission rates and LLM-as-judge
// hallucination rates.

#include "initfeat/common.hpp"
#include "initfeat/report.hpp"
#include "initfeat/tensorio.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <unordered_map>

namespace initfeat {

/// Exact count ratio; percent() = 100·numerator/denominator.
struct Rate {
    std::uint64_t numerator = 0;
    std::uint64_t denominator = 0;
    double percent() const;
};

// ---------------------------------------------------------------------------
// Framing tokens

struct FramingTokenList {
    std::string language;
    std::vector<std::string> tokens;
};

/// {"language": "zh", "tokens": ["...", ...]}
FramingTokenList load_framing_tokens(const std::filesystem::path& path);

/// Case-folds ASCII and Cyrillic, collapses whitespace runs (including
/// U+00A0 and U+3000) to one space, and trims both ends. Returns
/// code points; invalid UTF-8 bytes become U+FFFD.
std::u32string normalize_text(std::string_view utf8);

struct FramingOptions {
    std::size_t window = 30;  // code points of normalized text
    bool full_text = false;   // match anywhere instead of in the prefix
};

/// Outputs whose normalized prefix contains any normalized token.
Rate framing_rate(const std::vector<std::string>& outputs, const FramingTokenList& list,
                  const FramingOptions& opts = {});

// ---------------------------------------------------------------------------
// Judge

enum class Detector { irrelevant, untranslated, repetition, language };
inline constexpr std::array<Detector, 4> kAllDetectors{Detector::irrelevant, Detector::untranslated,
                                                       Detector::repetition, Detector::language};
std::string_view to_string(Detector d);

/// Prompt template with ${source_lang}, ${source_text}, ${target_lang},
/// ${target_text} placeholders.
std::string_view judge_template(Detector d);

/// Single-pass substitution; substituted text is never re-expanded.
std::string render_judge_prompt(Detector d, const SampleMeta& s);

struct JudgeRequest {
    std::string model;
    std::string prompt;

    /// Canonical chat-completions body (temperature 0).
    std::string body() const;
    /// FNV-1a 64 of body(), 16 lowercase hex digits. Keys the replay file.
    std::string hash() const;
};

/// Transient failure (connection refused, timeout, 5xx). Retried.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class JudgeTransport {
public:
    virtual ~JudgeTransport() = default;
    /// Raw reply text for one request. Must be safe to call concurrently.
    virtual std::string complete(const JudgeRequest& req) = 0;
};

/// Chat-completions over HTTP(S). `url` is the full endpoint, e.g.
/// http://localhost:8000/v1/chat/completions. The bearer token, if any, is
/// read from the named environment variable.
class HttpTransport : public JudgeTransport {
public:
    explicit HttpTransport(std::string url, std::string api_key_env = "INITFEAT_JUDGE_API_KEY",
                           std::chrono::seconds timeout = std::chrono::seconds(60));
    std::string complete(const JudgeRequest& req) override;

private:
    std::string origin_;
    std::string path_;
    std::string api_key_;
    std::chrono::seconds timeout_;
};

/// Serves replies recorded in a JSONL file of {"hash": ..., "reply": ...}.
class ReplayTransport : public JudgeTransport {
public:
    explicit ReplayTransport(const std::filesystem::path& path);
    std::string complete(const JudgeRequest& req) override;
    std::size_t size() const { return replies_.size(); }

private:
    std::unordered_map<std::string, std::string> replies_;
};

/// Forwards to another transport and appends every reply to a replay file.
class RecordingTransport : public JudgeTransport {
public:
    RecordingTransport(JudgeTransport& inner, const std::filesystem::path& path);
    std::string complete(const JudgeRequest& req) override;

private:
    JudgeTransport& inner_;
    std::filesystem::path path_;
    std::mutex mutex_;
};

/// Replies computed by a function of the request; for tests and dry runs.
class CallbackTransport : public JudgeTransport {
public:
    explicit CallbackTransport(std::function<std::string(const JudgeRequest&)> fn) : fn_(std::move(fn)) {}
    std::string complete(const JudgeRequest& req) override { return fn_(req); }

private:
    std::function<std::string(const JudgeRequest&)> fn_;
};

struct JudgeOptions {
    std::string model = "judge";
    int attempts = 3;
    std::chrono::milliseconds backoff{500};  // doubles after each failed attempt
    std::size_t in_flight = 4;
};

struct HallucinationFlags {
    bool irrelevant = false;
    bool untranslated = false;
    bool repetition = false;
    bool wrong_language = false;

    bool any() const { return irrelevant || untranslated || repetition || wrong_language; }
};

struct HallucinationVerdict {
    std::string id;
    HallucinationFlags flags;
    std::string judged_lang;  // lowercased ISO code or "unknown"
    bool is_hallucination = false;
    bool empty_output = false;  // short-circuited without judge calls
    bool judge_error = false;   // some reply could not be parsed
    std::string error_detail;
};

/// Leading '0'/'1' after optional whitespace and quotes, not followed by a
/// letter or digit. nullopt otherwise.
std::optional<bool> parse_flag_reply(std::string_view reply);

/// Lowercased ISO 639 code (2–3 letters) or "unknown"; nullopt otherwise.
std::optional<std::string> parse_language_reply(std::string_view reply);

/// Primary subtag of a language tag, lowercased ("zh-CN" -> "zh").
std::string primary_language(std::string_view tag);

/// Runs the four detectors for one sample. Throws DataError when output_text
/// is missing, TransportError after the last failed attempt.
HallucinationVerdict judge_sample(JudgeTransport& t, const SampleMeta& s, const JudgeOptions& opts = {});

/// Judges every sample with up to opts.in_flight concurrent samples; the
/// result is in input order.
std::vector<HallucinationVerdict> judge_samples(JudgeTransport& t, const std::vector<SampleMeta>& samples,
                                                const JudgeOptions& opts = {});

struct HallucinationSummary {
    Rate rate;  // hallucinations / non-error verdicts
    std::size_t total = 0;
    std::size_t judge_errors = 0;
    std::size_t empty_outputs = 0;
    std::size_t irrelevant = 0, untranslated = 0, repetition = 0, wrong_language = 0;
};

/// Throws DataError when no verdict is free of judge errors.
HallucinationSummary hallucination_rate(const std::vector<HallucinationVerdict>& verdicts);

ojson to_json(const HallucinationVerdict& v);
HallucinationVerdict verdict_from_json(const ojson& j);
ojson to_json(const HallucinationSummary& s);
ojson to_json(const Rate& r);

}  // namespace initfeat

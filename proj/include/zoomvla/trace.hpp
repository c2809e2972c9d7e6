#pragma once

// Structured trace grammar: the interleaved reasoning sequence a policy emits
// for one decision step. Wire form is a flat token-id list; the parsed form
// is a list of typed segments.
//
//   trace    := (think (tool evid)?)* action <eos>
//   think    := <think> TEXT* </think>
//   tool     := <tool> zoom_in X0 Y0 X1 Y1 </tool>      (coords in pixels)
//   evid     := <evid>                                   (payload out of band)
//   action   := <act> ACTION{K} </act>
//
// A tool call may only follow a think segment, every tool call is followed by
// exactly one evidence marker, and at most max_tool_calls calls are allowed.
// Regions must satisfy 0 <= x0 < x1 <= W and 0 <= y0 < y1 <= H.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vocab.hpp"

namespace zoomvla {

struct Region {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool operator==(const Region&) const = default;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
};

struct ToolSpec {
    int name_token = -1; // only zoom_in in scope
    Region region;
    bool operator==(const ToolSpec&) const = default;
};

/// How an evidence slot was filled. A trace parsed from raw tokens carries
/// Unresolved evidence; the rollout loop resolves it to a pixel patch or to
/// the tool-error marker. Pixels themselves live with the episode record and
/// are reconstructable from (frame, region).
enum class EvidenceKind : uint8_t { Unresolved, Patch, ToolError };

struct EvidenceRef {
    EvidenceKind kind = EvidenceKind::Unresolved;
    Region region; // meaningful when kind == Patch
    bool operator==(const EvidenceRef&) const = default;
};

struct TraceSegment {
    enum class Kind : uint8_t { Think, ToolCall, Evidence, Action };
    Kind kind = Kind::Think;
    std::vector<int> tokens;  // Think: text tokens; Action: K action tokens
    ToolSpec tool;            // ToolCall
    EvidenceRef evidence;     // Evidence
    bool operator==(const TraceSegment&) const = default;
};

struct Trace {
    std::vector<TraceSegment> segments;
    bool operator==(const Trace&) const = default;

    int tool_call_count() const {
        int n = 0;
        for (const auto& s : segments) {
            n += s.kind == TraceSegment::Kind::ToolCall;
        }
        return n;
    }
};

struct GrammarConfig {
    int chunk_len = 4;
    int max_tool_calls = 3;
    int image_w = 48;
    int image_h = 48;
};

struct ParseError {
    enum class Kind : uint8_t { UnbalancedTag, BadToolArgs, MissingAction, TrailingTokens };
    Kind kind = Kind::UnbalancedTag;
    int position = 0; // 0-based token index where the violation was detected
    std::string expected;
};

using ParseResult = std::variant<Trace, ParseError>;

inline const char* parse_error_name(ParseError::Kind k) {
    switch (k) {
        case ParseError::Kind::UnbalancedTag: return "UnbalancedTag";
        case ParseError::Kind::BadToolArgs: return "BadToolArgs";
        case ParseError::Kind::MissingAction: return "MissingAction";
        case ParseError::Kind::TrailingTokens: return "TrailingTokens";
    }
    return "?";
}

/// Parses a token list against the grammar. Returns the first violation.
inline ParseResult parse_trace(const std::vector<int>& tokens, const Vocabulary& vocab,
                               const GrammarConfig& cfg = {}) {
    auto fail = [](ParseError::Kind k, int pos, std::string expected) {
        return ParseResult(ParseError{k, pos, std::move(expected)});
    };
    const int n = static_cast<int>(tokens.size());
    for (int i = 0; i < n; ++i) {
        if (tokens[i] < 0 || tokens[i] >= vocab.size()) {
            return fail(ParseError::Kind::UnbalancedTag, i, "token id within vocabulary");
        }
    }

    Trace trace;
    int i = 0;
    int tool_calls = 0;
    bool after_think = false; // a tool call is only legal right after a think

    while (true) {
        if (i >= n) {
            return fail(ParseError::Kind::MissingAction, i, "<think> or <act>");
        }
        int t = tokens[i];
        if (vocab.is_control(t, kThinkOpen)) {
            ++i;
            TraceSegment seg;
            seg.kind = TraceSegment::Kind::Think;
            while (i < n && vocab.token_class(tokens[i]) == TokenClass::Text) {
                seg.tokens.push_back(tokens[i]);
                ++i;
            }
            if (i >= n || !vocab.is_control(tokens[i], kThinkClose)) {
                return fail(ParseError::Kind::UnbalancedTag, i, "</think>");
            }
            ++i;
            trace.segments.push_back(std::move(seg));
            after_think = true;
            continue;
        }
        if (vocab.is_control(t, kToolOpen)) {
            if (!after_think) {
                return fail(ParseError::Kind::UnbalancedTag, i, "<think> before <tool>");
            }
            if (tool_calls >= cfg.max_tool_calls) {
                return fail(ParseError::Kind::BadToolArgs, i, "tool budget exhausted");
            }
            int open_pos = i;
            ++i;
            if (i >= n || tokens[i] != vocab.zoom_name_token()) {
                return fail(ParseError::Kind::BadToolArgs, i, "tool name");
            }
            ToolSpec spec;
            spec.name_token = tokens[i];
            ++i;
            int coords[4];
            for (int c = 0; c < 4; ++c) {
                if (i >= n || vocab.coord_value(tokens[i]) < 0) {
                    return fail(ParseError::Kind::BadToolArgs, i, "coordinate token");
                }
                coords[c] = vocab.coord_value(tokens[i]);
                ++i;
            }
            spec.region = Region{coords[0], coords[1], coords[2], coords[3]};
            if (i >= n || !vocab.is_control(tokens[i], kToolClose)) {
                return fail(ParseError::Kind::BadToolArgs, i, "</tool>");
            }
            if (!(spec.region.x0 >= 0 && spec.region.x0 < spec.region.x1 && spec.region.x1 <= cfg.image_w &&
                  spec.region.y0 >= 0 && spec.region.y0 < spec.region.y1 && spec.region.y1 <= cfg.image_h)) {
                return fail(ParseError::Kind::BadToolArgs, open_pos, "region within bounds");
            }
            ++i;
            if (i >= n || !vocab.is_control(tokens[i], kEvid)) {
                return fail(ParseError::Kind::UnbalancedTag, i, "<evid>");
            }
            ++i;
            TraceSegment call;
            call.kind = TraceSegment::Kind::ToolCall;
            call.tool = spec;
            trace.segments.push_back(std::move(call));
            TraceSegment evid;
            evid.kind = TraceSegment::Kind::Evidence;
            trace.segments.push_back(std::move(evid));
            ++tool_calls;
            after_think = false;
            continue;
        }
        if (vocab.is_control(t, kActOpen)) {
            ++i;
            TraceSegment act;
            act.kind = TraceSegment::Kind::Action;
            for (int c = 0; c < cfg.chunk_len; ++c) {
                if (i >= n || vocab.token_class(tokens[i]) != TokenClass::Action) {
                    return fail(ParseError::Kind::UnbalancedTag, i, "action token");
                }
                act.tokens.push_back(tokens[i]);
                ++i;
            }
            if (i >= n || !vocab.is_control(tokens[i], kActClose)) {
                return fail(ParseError::Kind::UnbalancedTag, i, "</act>");
            }
            ++i;
            if (i >= n || !vocab.is_control(tokens[i], kEos)) {
                return fail(ParseError::Kind::UnbalancedTag, i, "<eos>");
            }
            ++i;
            trace.segments.push_back(std::move(act));
            if (i != n) {
                return fail(ParseError::Kind::TrailingTokens, i, "end of input");
            }
            return ParseResult(std::move(trace));
        }
        return fail(ParseError::Kind::UnbalancedTag, i, "<think> or <act>");
    }
}

/// Inverse of parse_trace on valid traces: emits the wire token list.
inline std::vector<int> render_trace(const Trace& trace, const Vocabulary& vocab) {
    std::vector<int> out;
    for (const auto& seg : trace.segments) {
        switch (seg.kind) {
            case TraceSegment::Kind::Think:
                out.push_back(kThinkOpen);
                out.insert(out.end(), seg.tokens.begin(), seg.tokens.end());
                out.push_back(kThinkClose);
                break;
            case TraceSegment::Kind::ToolCall:
                out.push_back(kToolOpen);
                out.push_back(seg.tool.name_token);
                out.push_back(vocab.coord_token(seg.tool.region.x0));
                out.push_back(vocab.coord_token(seg.tool.region.y0));
                out.push_back(vocab.coord_token(seg.tool.region.x1));
                out.push_back(vocab.coord_token(seg.tool.region.y1));
                out.push_back(kToolClose);
                break;
            case TraceSegment::Kind::Evidence:
                out.push_back(kEvid);
                break;
            case TraceSegment::Kind::Action:
                out.push_back(kActOpen);
                out.insert(out.end(), seg.tokens.begin(), seg.tokens.end());
                out.push_back(kActClose);
                out.push_back(kEos);
                break;
        }
    }
    return out;
}

/// Format-regularization indicator: 1 iff the token list parses. Total.
inline int check_format(const std::vector<int>& tokens, const Vocabulary& vocab,
                        const GrammarConfig& cfg = {}) {
    return std::holds_alternative<Trace>(parse_trace(tokens, vocab, cfg)) ? 1 : 0;
}

/// Human-readable dump using the tag names.
inline std::string dump_trace_tokens(const std::vector<int>& tokens, const Vocabulary& vocab) {
    return vocab.decode(tokens);
}

} // namespace zoomvla

#pragma once

// Token vocabulary for the structured reasoning traces. Every token belongs
// to exactly one class; the eight control tokens delimit segments, action
// tokens are the executable primitives, tool-arg tokens encode the zoom-in
// call (tool name + pixel coordinates), and text tokens carry the reasoning
// surface forms.

#include <array>
#include <cassert>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "util.hpp"

namespace zoomvla {

enum class TokenClass : uint8_t { Text, Control, ToolArg, Action };

// Fixed control-token ids; the grammar and the policy loop key off these.
enum ControlToken : int {
    kThinkOpen = 0,
    kThinkClose = 1,
    kToolOpen = 2,
    kToolClose = 3,
    kActOpen = 4,
    kActClose = 5,
    kEvid = 6,
    kEos = 7,
};
inline constexpr int kNumControlTokens = 8;

enum ActionToken : int {
    kActUp = 0,
    kActDown = 1,
    kActLeft = 2,
    kActRight = 3,
    kActToggle = 4,
    kActNoop = 5,
};
inline constexpr int kNumActionTokens = 6;

class Vocabulary {
public:
    Vocabulary() = default;

    /// Builds from surface forms + classes. Control tokens must occupy ids
    /// 0..7 in the canonical order above.
    Vocabulary(std::vector<std::string> surfaces, std::vector<TokenClass> classes)
        : surfaces_(std::move(surfaces)), classes_(std::move(classes)) {
        assert(surfaces_.size() == classes_.size());
        for (size_t i = 0; i < surfaces_.size(); ++i) {
            by_surface_[surfaces_[i]] = static_cast<int>(i);
        }
        for (int i = 0; i < static_cast<int>(surfaces_.size()); ++i) {
            switch (classes_[static_cast<size_t>(i)]) {
                case TokenClass::Action: action_ids_.push_back(i); break;
                case TokenClass::ToolArg: tool_arg_ids_.push_back(i); break;
                default: break;
            }
        }
    }

    int size() const { return static_cast<int>(surfaces_.size()); }

    TokenClass token_class(int id) const { return classes_[static_cast<size_t>(id)]; }

    const std::string& surface(int id) const { return surfaces_[static_cast<size_t>(id)]; }

    std::optional<int> lookup(std::string_view surface) const {
        auto it = by_surface_.find(std::string(surface));
        if (it == by_surface_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    int require(std::string_view surface) const {
        auto id = lookup(surface);
        if (!id) {
            throw IoError("token not in vocabulary: " + std::string(surface));
        }
        return *id;
    }

    bool is_control(int id, ControlToken which) const {
        return id == static_cast<int>(which) && classes_[static_cast<size_t>(id)] == TokenClass::Control;
    }

    /// Action-token ids in primitive order (up, down, left, right, toggle, noop).
    const std::vector<int>& action_ids() const { return action_ids_; }

    /// id of the action token for a primitive index in [0, 6).
    int action_id(int primitive) const { return action_ids_[static_cast<size_t>(primitive)]; }

    /// Inverse of action_id; -1 if the token is not an action.
    int primitive_of(int token) const {
        for (size_t i = 0; i < action_ids_.size(); ++i) {
            if (action_ids_[i] == token) {
                return static_cast<int>(i);
            }
        }
        return -1;
    }

    /// Coordinate value carried by a tool-arg token, or -1 (e.g. the tool name).
    int coord_value(int token) const {
        auto it = coord_values_.find(token);
        return it == coord_values_.end() ? -1 : it->second;
    }

    /// Tool-arg token encoding pixel coordinate v; v must be representable.
    int coord_token(int v) const {
        auto it = coord_tokens_.find(v);
        if (it == coord_tokens_.end()) {
            throw IoError("coordinate not representable: " + std::to_string(v));
        }
        return it->second;
    }

    int zoom_name_token() const { return zoom_name_token_; }
    int tool_err_token() const { return tool_err_token_; }

    std::vector<int> encode(const std::vector<std::string>& words) const {
        std::vector<int> ids;
        ids.reserve(words.size());
        for (const auto& w : words) {
            ids.push_back(require(w));
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) {
                out += ' ';
            }
            out += surface(ids[i]);
        }
        return out;
    }

    /// One surface form per line, line number = token id.
    std::string to_file_text() const {
        std::string out;
        for (const auto& s : surfaces_) {
            out += s;
            out += '\n';
        }
        return out;
    }

    static Vocabulary default_vocab(int max_coord = 48);
    static Vocabulary from_file_text(std::string_view text, int max_coord = 48);

private:
    void index_special_tokens(int max_coord) {
        for (int v = 0; v <= max_coord; ++v) {
            auto id = lookup(std::to_string(v));
            if (id && classes_[static_cast<size_t>(*id)] == TokenClass::ToolArg) {
                coord_values_[*id] = v;
                coord_tokens_[v] = *id;
            }
        }
        if (auto id = lookup("zoom_in")) {
            zoom_name_token_ = *id;
        }
        if (auto id = lookup("tool_err")) {
            tool_err_token_ = *id;
        }
    }

    std::vector<std::string> surfaces_;
    std::vector<TokenClass> classes_;
    std::unordered_map<std::string, int> by_surface_;
    std::vector<int> action_ids_;
    std::vector<int> tool_arg_ids_;
    std::unordered_map<int, int> coord_values_;
    std::unordered_map<int, int> coord_tokens_;
    int zoom_name_token_ = -1;
    int tool_err_token_ = -1;

    friend Vocabulary make_vocab_impl(std::vector<std::pair<std::string, TokenClass>>, int);
};

inline Vocabulary make_vocab_impl(std::vector<std::pair<std::string, TokenClass>> entries, int max_coord) {
    std::vector<std::string> surfaces;
    std::vector<TokenClass> classes;
    surfaces.reserve(entries.size());
    classes.reserve(entries.size());
    for (auto& [s, c] : entries) {
        surfaces.push_back(std::move(s));
        classes.push_back(c);
    }
    Vocabulary v(std::move(surfaces), std::move(classes));
    v.index_special_tokens(max_coord);
    return v;
}

inline Vocabulary Vocabulary::default_vocab(int max_coord) {
    std::vector<std::pair<std::string, TokenClass>> e;
    // Control, fixed order matching ControlToken.
    for (const char* s : {"<think>", "</think>", "<tool>", "</tool>", "<act>", "</act>", "<evid>", "<eos>"}) {
        e.emplace_back(s, TokenClass::Control);
    }
    // Action primitives.
    for (const char* s : {"up", "down", "left", "right", "toggle", "noop"}) {
        e.emplace_back(s, TokenClass::Action);
    }
    // Tool call arguments: name + pixel coordinates 0..max_coord.
    e.emplace_back("zoom_in", TokenClass::ToolArg);
    for (int v = 0; v <= max_coord; ++v) {
        e.emplace_back(std::to_string(v), TokenClass::ToolArg);
    }
    // Reasoning surface forms.
    for (const char* s : {"red", "green", "blue", "yellow", "cyan", "magenta", "orange", "white"}) {
        e.emplace_back(s, TokenClass::Text);
    }
    for (const char* s : {"dota", "dotb"}) {
        e.emplace_back(s, TokenClass::Text);
    }
    for (int i = 0; i < 12; ++i) {
        e.emplace_back("gx" + std::to_string(i), TokenClass::Text);
    }
    for (int i = 0; i < 12; ++i) {
        e.emplace_back("gy" + std::to_string(i), TokenClass::Text);
    }
    for (const char* s : {"go_up", "go_down", "go_left", "go_right"}) {
        e.emplace_back(s, TokenClass::Text);
    }
    for (const char* s : {"r0", "r1", "r2", "r3"}) {
        e.emplace_back(s, TokenClass::Text);
    }
    for (const char* s : {"grab", "drop", "toward", "two", "marking", "confirmed", "wrong",
                          "pick", "place", "the", "block", "plate", "on", "and", "tool_err"}) {
        e.emplace_back(s, TokenClass::Text);
    }
    return make_vocab_impl(std::move(e), max_coord);
}

/// The vocabulary file stores surfaces only; the class is a fixed function of
/// the surface form: <...> tags are control, the six primitive names are
/// actions, zoom_in and bare integers are tool args, everything else is text.
inline TokenClass classify_surface(std::string_view s) {
    if (s.size() >= 2 && s.front() == '<' && s.back() == '>') {
        return TokenClass::Control;
    }
    for (const char* a : {"up", "down", "left", "right", "toggle", "noop"}) {
        if (s == a) {
            return TokenClass::Action;
        }
    }
    if (s == "zoom_in") {
        return TokenClass::ToolArg;
    }
    if (!s.empty()) {
        bool all_digits = true;
        for (char c : s) {
            if (c < '0' || c > '9') {
                all_digits = false;
                break;
            }
        }
        if (all_digits) {
            return TokenClass::ToolArg;
        }
    }
    return TokenClass::Text;
}

inline Vocabulary Vocabulary::from_file_text(std::string_view text, int max_coord) {
    std::vector<std::pair<std::string, TokenClass>> e;
    for (const auto& line : split_lines(text)) {
        e.emplace_back(line, classify_surface(line));
    }
    return make_vocab_impl(std::move(e), max_coord);
}

} // namespace zoomvla

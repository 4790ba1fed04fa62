#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vofa/manifest.hpp"
#include "vofa/rng.hpp"
#include "vofa/video.hpp"

namespace vofa {

struct SynthError : std::runtime_error {
    explicit SynthError(const std::string& what) : std::runtime_error(what) {}
};

// Scripted scenes: one subject shape with up to two temporal events, plus an
// optional static distractor. Captions are produced from the script by a
// fixed grammar, so the text is exact by construction.
enum class EventKind { appear, disappear, move_left, move_right };

inline EventKind reverse_event(EventKind e) {
    switch (e) {
        case EventKind::appear: return EventKind::disappear;
        case EventKind::disappear: return EventKind::appear;
        case EventKind::move_left: return EventKind::move_right;
        case EventKind::move_right: return EventKind::move_left;
    }
    return e;
}

inline const char* event_phrase(EventKind e) {
    switch (e) {
        case EventKind::appear: return "appears";
        case EventKind::disappear: return "disappears";
        case EventKind::move_left: return "moves left";
        case EventKind::move_right: return "moves right";
    }
    return "";
}

struct Rgb {
    uint8_t r, g, b;
};

struct ShapeSpec {
    std::string shape;   // square | circle | triangle
    std::string color;   // name in the color vocabulary
    Rgb rgb{};
    double cx = 0, cy = 0;  // center, pixels
    int size = 8;           // diameter / side length
};

struct EventScript {
    ShapeSpec subject;
    std::vector<EventKind> events;  // empty = static scene
    std::optional<ShapeSpec> distractor;
};

// Time-reversal of the script: two-event (e1, e2) plays back as
// (reverse(e2), reverse(e1)).
inline EventScript reverse_script(const EventScript& s) {
    EventScript out = s;
    if (s.events.size() == 1) {
        out.events = {reverse_event(s.events[0])};
    } else if (s.events.size() == 2) {
        out.events = {reverse_event(s.events[1]), reverse_event(s.events[0])};
    }
    return out;
}

// The caption grammar. Every caption is fully determined by the script.
inline std::string caption_for(const EventScript& s) {
    std::string out = "a " + s.subject.color + " " + s.subject.shape;
    if (s.events.size() >= 1) out += std::string(" ") + event_phrase(s.events[0]);
    if (s.events.size() == 2) out += std::string(" then ") + event_phrase(s.events[1]);
    return out;
}

struct SyntheticSpec {
    int n_clips = 32;
    int frames_per_clip = 8;
    int canvas_px = 32;
    std::vector<std::string> shapes = {"square", "circle", "triangle"};
    std::vector<std::string> colors = {"red", "green", "blue", "yellow"};
    double two_event_fraction = 0.4;
    double qa_fraction = 0.25;
    double distractor_fraction = 0.35;
    bool static_scenes = false;  // render motionless subjects captioned "a {color} {shape}"
    uint64_t seed = 0;
};

namespace detail {

inline Rgb color_rgb(const std::string& name) {
    if (name == "red") return {220, 44, 44};
    if (name == "green") return {44, 200, 70};
    if (name == "blue") return {56, 96, 228};
    if (name == "yellow") return {232, 218, 52};
    if (name == "purple") return {150, 60, 200};
    if (name == "white") return {240, 240, 240};
    throw SynthError("unknown color name: " + name);
}

inline bool inside_shape(const std::string& shape, double cx, double cy, int size, int x, int y) {
    const double half = size / 2.0;
    const double dx = x + 0.5 - cx;
    const double dy = y + 0.5 - cy;
    if (shape == "square") return std::abs(dx) <= half && std::abs(dy) <= half;
    if (shape == "circle") return dx * dx + dy * dy <= half * half;
    if (shape == "triangle")  // upright, apex at top
        return dy >= -half && dy <= half && std::abs(dx) <= (dy + half) / 2.0;
    throw SynthError("unknown shape name: " + shape);
}

inline void draw_shape(VideoClip& clip, int frame, const ShapeSpec& sh, double cx, double cy) {
    const int r = sh.size / 2 + 1;
    const int x0 = std::max(0, static_cast<int>(cx) - r - 1);
    const int x1 = std::min(clip.w - 1, static_cast<int>(cx) + r + 1);
    const int y0 = std::max(0, static_cast<int>(cy) - r - 1);
    const int y1 = std::min(clip.h - 1, static_cast<int>(cy) + r + 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (inside_shape(sh.shape, cx, cy, sh.size, x, y)) {
                clip.at(frame, y, x, 0) = sh.rgb.r;
                clip.at(frame, y, x, 1) = sh.rgb.g;
                clip.at(frame, y, x, 2) = sh.rgb.b;
            }
}

struct FrameState {
    bool visible;
    double cx;
};

// Per-frame subject state for a given event list over T frames.
inline std::vector<FrameState> subject_timeline(const EventScript& s, int t, int canvas) {
    std::vector<FrameState> st(static_cast<size_t>(t), {true, s.subject.cx});
    const double span = canvas / 3.0;
    auto dir = [](EventKind e) { return e == EventKind::move_left ? -1.0 : 1.0; };

    if (s.events.empty()) return st;

    if (s.events.size() == 1) {
        const EventKind e = s.events[0];
        if (e == EventKind::appear) {
            for (int i = 0; i < t / 2; ++i) st[static_cast<size_t>(i)].visible = false;
        } else if (e == EventKind::disappear) {
            for (int i = t / 2; i < t; ++i) st[static_cast<size_t>(i)].visible = false;
        } else {
            const double step = span / (t - 1);
            for (int i = 0; i < t; ++i) st[static_cast<size_t>(i)].cx = s.subject.cx + dir(e) * step * i;
        }
        return st;
    }

    // two events: first plays out in [0, h), second in [h, t)
    const int h = t / 2;
    const EventKind e1 = s.events[0], e2 = s.events[1];
    if (e1 == EventKind::appear) {
        // hidden for the first quarter, static until h, then moving (e2)
        const int a = t / 4;
        for (int i = 0; i < a; ++i) st[static_cast<size_t>(i)].visible = false;
        const double step = span / (t - h);
        for (int i = h; i < t; ++i)
            st[static_cast<size_t>(i)].cx = s.subject.cx + dir(e2) * step * (i - h + 1);
    } else {
        // moving (e1) through [0, h), then static and disappearing (e2)
        const double step = span / h;
        double last = s.subject.cx;
        for (int i = 0; i < h; ++i) {
            last = s.subject.cx + dir(e1) * step * i;
            st[static_cast<size_t>(i)].cx = last;
        }
        const int d = (3 * t) / 4;
        for (int i = h; i < t; ++i) {
            st[static_cast<size_t>(i)].cx = last;
            if (i >= d) st[static_cast<size_t>(i)].visible = false;
        }
    }
    return st;
}

}  // namespace detail

inline VideoClip render_script(const EventScript& script, int frames, int canvas) {
    VideoClip clip(frames, canvas, canvas);
    auto timeline = detail::subject_timeline(script, frames, canvas);
    for (int f = 0; f < frames; ++f) {
        if (script.distractor)
            detail::draw_shape(clip, f, *script.distractor, script.distractor->cx, script.distractor->cy);
        if (timeline[static_cast<size_t>(f)].visible)
            detail::draw_shape(clip, f, script.subject, timeline[static_cast<size_t>(f)].cx, script.subject.cy);
    }
    return clip;
}

struct SyntheticCorpus {
    std::vector<VideoClip> clips;
    DatasetManifest manifest;
    std::vector<EventScript> scripts;

    int two_event_count() const {
        int n = 0;
        for (const auto& s : scripts) n += s.events.size() == 2 ? 1 : 0;
        return n;
    }
};

// Deterministic given spec.seed: clip i is derived from stream ("synth", i).
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
    if (spec.frames_per_clip < 4) throw SynthError("frames_per_clip must be >= 4");
    if (spec.n_clips < 1) throw SynthError("n_clips must be >= 1");
    if (spec.shapes.size() < 2 || spec.colors.size() < 2)
        throw SynthError("need at least two shapes and two colors");

    // two-event pairs whose time reversal yields a different caption
    static const std::vector<std::pair<EventKind, EventKind>> kTwoEvent = {
        {EventKind::appear, EventKind::move_left},
        {EventKind::appear, EventKind::move_right},
        {EventKind::move_left, EventKind::disappear},
        {EventKind::move_right, EventKind::disappear},
    };
    static const std::vector<EventKind> kSingle = {EventKind::appear, EventKind::disappear,
                                                   EventKind::move_left, EventKind::move_right};

    SyntheticCorpus corpus;
    for (int i = 0; i < spec.n_clips; ++i) {
        Rng rng(spec.seed, "synth", static_cast<uint64_t>(i));
        EventScript script;
        script.subject.shape = spec.shapes[rng.next_below(spec.shapes.size())];
        script.subject.color = spec.colors[rng.next_below(spec.colors.size())];
        script.subject.rgb = detail::color_rgb(script.subject.color);
        script.subject.size = spec.canvas_px * 5 / 16;
        script.subject.cy = spec.canvas_px / 2.0 + (rng.next_double() - 0.5) * spec.canvas_px / 8.0;

        if (!spec.static_scenes) {
            if (rng.next_double() < spec.two_event_fraction) {
                auto [e1, e2] = kTwoEvent[rng.next_below(kTwoEvent.size())];
                script.events = {e1, e2};
            } else {
                script.events = {kSingle[rng.next_below(kSingle.size())]};
            }
        }

        // starting x keeps the motion inside the canvas
        double cx = spec.canvas_px / 2.0;
        for (EventKind e : script.events) {
            if (e == EventKind::move_left) cx = spec.canvas_px * 0.62;
            if (e == EventKind::move_right) cx = spec.canvas_px * 0.38;
        }
        script.subject.cx = cx + (rng.next_double() - 0.5) * spec.canvas_px / 16.0;

        if (rng.next_double() < spec.distractor_fraction) {
            ShapeSpec d;
            do {
                d.shape = spec.shapes[rng.next_below(spec.shapes.size())];
            } while (d.shape == script.subject.shape);
            do {
                d.color = spec.colors[rng.next_below(spec.colors.size())];
            } while (d.color == script.subject.color);
            d.rgb = detail::color_rgb(d.color);
            d.size = spec.canvas_px / 5;
            d.cx = rng.next_bool() ? spec.canvas_px * 0.15 : spec.canvas_px * 0.85;
            d.cy = spec.canvas_px * 0.15;
            script.distractor = d;
        }

        VideoClip clip = render_script(script, spec.frames_per_clip, spec.canvas_px);
        char id[16];
        std::snprintf(id, sizeof(id), "clip%06d", i);
        clip.clip_id = id;

        ManifestRecord rec;
        rec.clip_id = id;
        rec.frames_path = std::string("clips/") + id + ".vofr";
        rec.captions.push_back(caption_for(script));
        if (rng.next_double() < spec.qa_fraction) {
            if (rng.next_bool()) {
                rec.qa.push_back({"what color is the " + script.subject.shape + " ?", script.subject.color});
            } else {
                rec.qa.push_back({"what shape is the " + script.subject.color + " thing ?", script.subject.shape});
            }
        }

        corpus.clips.push_back(std::move(clip));
        corpus.manifest.records.push_back(std::move(rec));
        corpus.scripts.push_back(std::move(script));
    }
    return corpus;
}

}  // namespace vofa

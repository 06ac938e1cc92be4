#include "docdet/page.hpp"

#include <unordered_map>

#include "docdet/error.hpp"

namespace docdet {

std::vector<Word> PageSample::words() const {
    std::vector<Word> out;
    std::unordered_map<int, size_t> slot;
    for (size_t i = 0; i < chars.size(); ++i) {
        const CharAnnotation& c = chars[i];
        auto [it, inserted] = slot.try_emplace(c.word_id, out.size());
        if (inserted) {
            Word w;
            w.id = c.word_id;
            w.box = c.box;
            out.push_back(std::move(w));
        }
        Word& w = out[it->second];
        w.char_indices.push_back(i);
        w.box = box_union(w.box, c.box);
        w.regular = w.regular || !c.is_special;
    }
    return out;
}

std::vector<Box> PageSample::regular_word_boxes() const {
    std::vector<Box> out;
    for (const Word& w : words())
        if (w.regular) out.push_back(w.box);
    return out;
}

bool PageSample::valid() const {
    for (const CharAnnotation& c : chars) {
        if (!c.box.valid() || c.word_id < 0) return false;
        if (c.box.x0 < 0 || c.box.y0 < 0 || c.box.x1 > width() || c.box.y1 > height()) return false;
    }
    return true;
}

CharSet default_special_chars() {
    return {U'-', U'_', U'*', U'|', U'=', U'~', U'.', U':', U',', U';', U'•', U'/'};
}

std::string to_utf8(char32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
    return out;
}

std::string to_utf8(std::u32string_view s) {
    std::string out;
    for (char32_t c : s) out += to_utf8(c);
    return out;
}

std::u32string from_utf8(std::string_view s) {
    std::u32string out;
    size_t i = 0;
    while (i < s.size()) {
        const auto b = static_cast<unsigned char>(s[i]);
        int extra = 0;
        char32_t cp = 0;
        if (b < 0x80) {
            cp = b;
        } else if ((b & 0xE0) == 0xC0) {
            cp = b & 0x1F;
            extra = 1;
        } else if ((b & 0xF0) == 0xE0) {
            cp = b & 0x0F;
            extra = 2;
        } else if ((b & 0xF8) == 0xF0) {
            cp = b & 0x07;
            extra = 3;
        } else {
            throw IoError("invalid UTF-8 lead byte");
        }
        if (i + extra >= s.size() && extra > 0) throw IoError("truncated UTF-8 sequence");
        for (int k = 1; k <= extra; ++k) {
            const auto cb = static_cast<unsigned char>(s[i + k]);
            if ((cb & 0xC0) != 0x80) throw IoError("invalid UTF-8 continuation byte");
            cp = (cp << 6) | (cb & 0x3F);
        }
        out += cp;
        i += extra + 1;
    }
    return out;
}

}  // namespace docdet

#!/usr/bin/env python3
"""Regenerate crates/core/data/phonology.tsv.

The table is a coarse approximation built from modern Mandarin readings
(pypinyin default reading per character). Tones 1/2 map to ping, 3/4 to
ze, the neutral tone to unknown. Rhyme groups follow the eighteen-group
modern scheme (十八韵), keyed by the final.

Usage: pip install pypinyin && python3 scripts/gen_phonology.py > crates/core/data/phonology.tsv
"""
from pypinyin import pinyin, Style

SIBILANT = {"zh", "ch", "sh", "r", "z", "c", "s"}

GROUPS = {
    "a": "麻", "ia": "麻", "ua": "麻",
    "o": "波", "uo": "波",
    "e": "歌",
    "i": "齐",
    "ie": "皆", "ve": "皆", "ue": "皆",
    "er": "儿",
    "ei": "微", "ui": "微", "uei": "微",
    "ai": "开", "uai": "开",
    "u": "姑",
    "v": "鱼",
    "ou": "侯", "iu": "侯", "iou": "侯",
    "ao": "豪", "iao": "豪",
    "an": "寒", "ian": "寒", "uan": "寒", "van": "寒",
    "en": "痕", "in": "痕", "un": "痕", "uen": "痕", "vn": "痕",
    "ang": "唐", "iang": "唐", "uang": "唐",
    "eng": "庚", "ing": "庚", "ueng": "庚",
    "ong": "东", "iong": "东",
}


def gb2312_chars():
    for hi in range(0xB0, 0xF8):
        for lo in range(0xA1, 0xFF):
            try:
                ch = bytes([hi, lo]).decode("gb2312")
            except UnicodeDecodeError:
                continue
            yield ch


def main():
    print("# phonology table v1: character<TAB>rhyme group<TAB>tone class")
    print("# APPROXIMATE: modern Mandarin readings, tones 1/2 = ping, 3/4 = ze.")
    print("# Rhyme groups: eighteen-group modern scheme. Replace with 平水韵 data for classical rules.")
    for ch in gb2312_chars():
        t3 = pinyin(ch, style=Style.TONE3, strict=True)[0][0]
        fin = pinyin(ch, style=Style.FINALS, strict=True)[0][0]
        ini = pinyin(ch, style=Style.INITIALS, strict=True)[0][0]
        if not t3 or not t3[-1].isdigit() and fin == "":
            continue
        if fin == "i" and ini in SIBILANT:
            group = "支"
        else:
            group = GROUPS.get(fin)
        if group is None:
            continue
        tone = t3[-1] if t3[-1].isdigit() else "5"
        tone_class = {"1": "ping", "2": "ping", "3": "ze", "4": "ze"}.get(tone, "unknown")
        print(f"{ch}\t{group}\t{tone_class}")


if __name__ == "__main__":
    main()

"""Standalone re-execution of the hash-chain lottery loop.

f(x) = SHA256(pp || x); ticket = first 8 bytes (LE) of SHA256(output || slot_le64);
a step wins when ticket < round(p * 2^64).

Run: python3 vdf_oracle.py
"""
import hashlib
import struct


def run(pp, x, slot, p):
    th = round(p * 2**64)
    it = 0
    while True:
        x = hashlib.sha256(pp + x).digest()
        it += 1
        slot += 1
        t = struct.unpack("<Q", hashlib.sha256(x + struct.pack("<Q", slot)).digest()[:8])[0]
        if t < th:
            return it, slot, x.hex()


if __name__ == "__main__":
    pp = bytes([7]) * 32
    for seed in range(4):
        x = hashlib.sha256(b"S0" + bytes([seed])).digest()
        it, slot, out = run(pp, x, 100, 2**-8)
        print(seed, it, slot, out)

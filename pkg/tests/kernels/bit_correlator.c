/* Counts the bits of each input byte that match the constant mask 0xA5
 * (xor against the inverted mask, then add the bits). */
#define N 32

void bit_correlator(const unsigned char din[N], unsigned char cnt[N]) {
  int i;
  for (i = 0; i < N; i = i + 1) {
    unsigned char m = din[i] ^ 0x5A;
    cnt[i] = (m & 1) + ((m >> 1) & 1) + ((m >> 2) & 1) + ((m >> 3) & 1)
           + ((m >> 4) & 1) + ((m >> 5) & 1) + ((m >> 6) & 1) + ((m >> 7) & 1);
  }
}

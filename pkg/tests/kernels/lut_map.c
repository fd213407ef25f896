/* Arbitrary 10-bit to 16-bit mapping through a user ROM table. */
#define N 32

void lut_map(const uint10_t idx[N], unsigned short val[N]) {
  int i;
  for (i = 0; i < N; i = i + 1) {
    val[i] = lut("user_rom", idx[i]);
  }
}

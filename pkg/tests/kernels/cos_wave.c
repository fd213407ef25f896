/* Cosine samples from the builtin 1024-entry table. */
#define N 32

void cos_wave(const uint10_t phase[N], short cval[N]) {
  int i;
  for (i = 0; i < N; i = i + 1) {
    cval[i] = lut("cos", phase[i]);
  }
}

/* Multiplier-accumulator guarded by a new-data flag: invalid samples
 * leave the accumulator untouched. */
#define N 24

void mul_acc(const int12_t a[N], const int12_t b[N], const uint1_t nd[N],
             int *acc) {
  int sum = 0;
  int i;
  for (i = 0; i < N; i = i + 1) {
    if (nd[i]) {
      sum = sum + a[i] * b[i];
    }
  }
  *acc = sum;
}

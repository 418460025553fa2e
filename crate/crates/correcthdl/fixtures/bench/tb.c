#include <stdio.h>

unsigned char pipeline_top(unsigned char x);

int main(void) {
    unsigned char xs[4] = {1u, 2u, 3u, 4u};
    int i;
    for (i = 0; i < 4; i++) {
        printf("%u\n", (unsigned)pipeline_top(xs[i]));
    }
    return 0;
}
